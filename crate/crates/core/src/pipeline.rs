//! Per-session analysis and study-level aggregation.

use serde::Serialize;
use thiserror::Error;

use crate::features::{
    click_stats, fraction_held, mouse_kinematics, ClickStats, FeatureError, MatchMode, MouseKinematics,
};
use crate::model::{Cohort, Interval, Key, KeySet, PlayerMeta, Session};
use crate::numerics::{fit_pca, NumericsError, PcaModel};
use crate::preprocess::{
    beats_to_bpm, extract_alive_segments, interpolate_gaps, missing_stats, slice_by_intervals, MissingReport,
    PreprocessError, DEFAULT_BPM_WINDOW, DEFAULT_MAX_GAP_S,
};
use crate::zones::{
    average_distribution, default_zone_model, window_distributions, zone_shares, AveragedDistribution, Point,
    WindowDistribution, ZoneModel, ZoneSequence, DEFAULT_HOP_S, DEFAULT_WINDOW_S,
};

pub const DEFAULT_MOUSE_WINDOW_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub zones: ZoneModel,
    pub window_s: f64,
    pub hop_s: f64,
    pub max_gap_s: f64,
    pub mouse_window_s: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            zones: default_zone_model(),
            window_s: DEFAULT_WINDOW_S,
            hop_s: DEFAULT_HOP_S,
            max_gap_s: DEFAULT_MAX_GAP_S,
            mouse_window_s: DEFAULT_MOUSE_WINDOW_S,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub fn ad_keys() -> KeySet {
    KeySet::of(&[Key::A, Key::D])
}

pub fn w_m1_keys() -> KeySet {
    KeySet::of(&[Key::W, Key::Mouse1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundFeatures {
    pub round: u32,
    pub alive_s: f64,
    pub ad_fraction: f64,
    pub w_m1_fraction: f64,
    pub clicks: ClickStats,
    pub kinematics: Option<MouseKinematics>,
}

impl RoundFeatures {
    /// Named values in a fixed order, for the long-format feature table.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("alive_s", self.alive_s),
            ("ad_hold_fraction", self.ad_fraction),
            ("w_mouse1_fraction", self.w_m1_fraction),
            ("click_count", self.clicks.click_count as f64),
            ("click_mean_duration_s", self.clicks.mean_duration_s),
            ("clicks_per_minute", self.clicks.clicks_per_minute),
        ];
        if let Some(k) = &self.kinematics {
            v.extend([
                ("mouse_path_mean_px", k.path_mean_px),
                ("mouse_path_std_px", k.path_std_px),
                ("mouse_vel_mean_px_s", k.vel_mean_px_s),
                ("mouse_vel_std_px_s", k.vel_std_px_s),
            ]);
        }
        v
    }
}

/// A window distribution tagged with the alive segment it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentWindow {
    pub segment: usize,
    pub window: WindowDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerAnalysis {
    pub meta: PlayerMeta,
    /// Missingness of the raw gaze series.
    pub missing: MissingReport,
    /// Missingness and interpolation inside alive segments.
    pub interpolation: MissingReport,
    pub alive: Vec<Interval>,
    pub windows: Vec<SegmentWindow>,
    pub average: Option<AveragedDistribution>,
    pub shares: Option<Vec<f64>>,
    /// Valid gaze points inside alive segments, after interpolation.
    #[serde(skip)]
    pub gaze_points: Vec<Point>,
    pub ad_fraction: Option<f64>,
    pub w_m1_fraction: Option<f64>,
    pub rounds: Vec<RoundFeatures>,
    pub mean_bpm: Option<f64>,
}

pub fn analyze_session(session: &Session, config: &AnalysisConfig) -> Result<PlayerAnalysis, PipelineError> {
    if !(config.window_s > 0.0 && config.hop_s > 0.0 && config.mouse_window_s > 0.0) {
        return Err(PipelineError::Config("window and hop must be positive".into()));
    }
    if !(config.max_gap_s >= 0.0) {
        return Err(PipelineError::Config("max gap must be non-negative".into()));
    }
    let player = &session.meta.player_id;
    let alive = extract_alive_segments(&session.timeline, player)?;
    let k = config.zones.k();

    let mut interpolation = MissingReport::default();
    let mut windows = Vec::new();
    let mut gaze_points = Vec::new();
    let mut all_zones = Vec::new();
    for (segment, (iv, slice)) in alive
        .iter()
        .zip(slice_by_intervals(&session.gaze.samples, &alive))
        .enumerate()
    {
        let (filled, report) = interpolate_gaps(slice, config.max_gap_s);
        interpolation.merge(&report);
        gaze_points.extend(filled.iter().filter_map(|s| s.point()));
        let seq = ZoneSequence::from_segment(&filled, *iv, &config.zones);
        windows.extend(
            window_distributions(&seq, k, config.window_s, config.hop_s)
                .into_iter()
                .map(|window| SegmentWindow { segment, window }),
        );
        all_zones.extend(seq.zones);
    }
    let plain: Vec<WindowDistribution> = windows.iter().map(|w| w.window.clone()).collect();

    let period = session.input_period_s;
    let input = &session.input;
    let rounds = alive
        .iter()
        .filter_map(|iv| {
            let round = session.timeline.round_at(iv.start)?;
            let one = std::slice::from_ref(iv);
            Some(RoundFeatures {
                round: session.timeline.rounds[round].index,
                alive_s: iv.duration(),
                ad_fraction: fraction_held(input, ad_keys(), one, MatchMode::Any, period).ok()?,
                w_m1_fraction: fraction_held(input, w_m1_keys(), one, MatchMode::All, period).ok()?,
                clicks: click_stats(input, Key::Mouse1, one, period).ok()?,
                kinematics: mouse_kinematics(input, one, config.mouse_window_s).ok(),
            })
        })
        .collect();

    let mean_bpm = session
        .hrm
        .as_ref()
        .and_then(|b| beats_to_bpm(b, DEFAULT_BPM_WINDOW).ok())
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(|b| b.bpm).sum::<f64>() / s.len() as f64);

    Ok(PlayerAnalysis {
        meta: session.meta.clone(),
        missing: missing_stats(&session.gaze),
        interpolation,
        average: average_distribution(&plain).ok(),
        shares: zone_shares(&all_zones, k).ok(),
        windows,
        gaze_points,
        ad_fraction: feature(fraction_held(input, ad_keys(), &alive, MatchMode::Any, period)),
        w_m1_fraction: feature(fraction_held(input, w_m1_keys(), &alive, MatchMode::All, period)),
        alive,
        rounds,
        mean_bpm,
    })
}

fn feature(r: Result<f64, FeatureError>) -> Option<f64> {
    r.ok()
}

/// All window distributions of all players, in player order.
pub fn window_matrix(players: &[PlayerAnalysis]) -> Vec<Vec<f64>> {
    players
        .iter()
        .flat_map(|p| p.windows.iter().map(|w| w.window.probs.clone()))
        .collect()
}

pub fn fit_study_pca(players: &[PlayerAnalysis]) -> Result<PcaModel, NumericsError> {
    fit_pca(&window_matrix(players))
}

/// Mean of a per-player value over one cohort, skipping players without it.
pub fn cohort_mean(
    players: &[PlayerAnalysis],
    cohort: Cohort,
    value: impl Fn(&PlayerAnalysis) -> Option<f64>,
) -> Option<f64> {
    let xs: Vec<f64> = players
        .iter()
        .filter(|p| p.meta.cohort == cohort)
        .filter_map(value)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Width of the gap between two 1-D point sets: positive when a threshold
/// separates them, in either orientation.
pub fn separation_margin(a: &[f64], b: &[f64]) -> Option<f64> {
    let lo = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some((lo(a) - hi(b)).max(lo(b) - hi(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn fixture_session_analysis() {
        let s = fixtures::session();
        let a = analyze_session(&s, &AnalysisConfig::default()).unwrap();
        // alive from spawn at 0 to death at 25
        assert_eq!(a.alive, vec![Interval::new(0.0, 25.0).unwrap()]);
        // 25 s span, 15 s windows, 1 s hop -> 11 windows
        assert_eq!(a.windows.len(), 11);
        let avg = a.average.unwrap();
        assert_eq!(avg.probs[0], 1.0);
        assert_eq!(a.shares.unwrap()[0], 1.0);
        assert_eq!(a.rounds.len(), 1);
        assert_eq!(a.gaze_points.len(), 250);
    }

    #[test]
    fn unknown_player_is_an_error() {
        let mut s = fixtures::session();
        s.meta.player_id = "ghost".into();
        assert!(matches!(
            analyze_session(&s, &AnalysisConfig::default()),
            Err(PipelineError::Preprocess(PreprocessError::UnknownPlayer(_)))
        ));
    }

    #[test]
    fn margins() {
        assert_eq!(separation_margin(&[3.0, 4.0], &[1.0, 2.0]), Some(1.0));
        assert_eq!(separation_margin(&[1.0, 2.0], &[3.0, 5.0]), Some(1.0));
        assert_eq!(separation_margin(&[1.0, 3.0], &[2.0]), Some(-1.0));
        assert_eq!(separation_margin(&[], &[2.0]), None);
    }
}
