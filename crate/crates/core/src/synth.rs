//! Seeded synthetic sessions in the capture file formats.
//!
//! Gaze follows a zone-level Markov process: each sample either stays in the
//! current zone (probability `dwell_persistence`) or redraws a zone from
//! `zone_dwell`, so `zone_dwell` is also the stationary distribution. Input
//! state is drawn in 0.25 s blocks so hold fractions match the profile rates
//! in expectation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SessionFiles;
use crate::model::{
    BeatSeries, Cohort, EventKind, GameEvent, GazeSample, GazeSeries, InputSample, Key, KeySet, MatchTimeline,
    PlayerMeta, Round, Screen, Session, DEFAULT_INPUT_PERIOD_S, DEFAULT_SCREEN,
};
use crate::rng::XorShift64Star;
use crate::zones::ZoneModel;

/// Mean length, in samples, of a gaze dropout run.
const MEAN_DROPOUT_RUN: f64 = 4.0;
const INPUT_BLOCK_S: f64 = 0.25;
const BEAT_JITTER: f64 = 0.05;
const MAX_BPM_BASE: f64 = 225.0;
const DEATH_PROBABILITY: f64 = 0.45;
const OPPONENTS: [&str; 2] = ["opp1", "opp2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortProfile {
    pub cohort: Cohort,
    /// Stationary zone propensities, one per zone.
    pub zone_dwell: Vec<f64>,
    /// Probability of staying in the current zone for the next sample.
    pub dwell_persistence: f64,
    /// Standard deviation of gaze samples around the zone center.
    pub gaze_noise_px: f64,
    pub missing_rate: f64,
    /// Target fraction of time with A or D held.
    pub ad_hold_rate: f64,
    /// Target fraction of time with W and MOUSE1 held together.
    pub w_m1_rate: f64,
    pub bpm_base: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

impl CohortProfile {
    pub fn validate(&self, zones: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        if self.zone_dwell.len() != zones {
            return bad(format!(
                "zone_dwell has {} entries for {zones} zones",
                self.zone_dwell.len()
            ));
        }
        if self.zone_dwell.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return bad("zone_dwell entries must be non-negative".into());
        }
        let sum: f64 = self.zone_dwell.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("zone_dwell sums to {sum}, not 1"));
        }
        if !(0.0..1.0).contains(&self.dwell_persistence) {
            return bad("dwell_persistence must lie in [0, 1)".into());
        }
        if !(self.gaze_noise_px >= 0.0 && self.gaze_noise_px.is_finite()) {
            return bad("gaze_noise_px must be non-negative".into());
        }
        for (name, v) in [
            ("missing_rate", self.missing_rate),
            ("ad_hold_rate", self.ad_hold_rate),
            ("w_m1_rate", self.w_m1_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.bpm_base > 0.0 && self.bpm_base <= MAX_BPM_BASE) {
            return bad(format!("bpm_base must lie in (0, {MAX_BPM_BASE}]"));
        }
        Ok(())
    }
}

/// Calibration profiles: professionals dwell on the cross-hair and rarely on
/// the radar, strafe more and run-and-shoot less.
pub fn default_profiles() -> (CohortProfile, CohortProfile) {
    let professional = CohortProfile {
        cohort: Cohort::Professional,
        zone_dwell: vec![0.78, 0.03, 0.03, 0.03, 0.03, 0.03, 0.03, 0.02, 0.02],
        dwell_persistence: 0.9,
        gaze_noise_px: 35.0,
        missing_rate: 0.04,
        ad_hold_rate: 0.45,
        w_m1_rate: 0.04,
        bpm_base: 78.0,
    };
    let amateur = CohortProfile {
        cohort: Cohort::Amateur,
        zone_dwell: vec![0.50, 0.13, 0.05, 0.06, 0.05, 0.06, 0.05, 0.05, 0.05],
        dwell_persistence: 0.9,
        gaze_noise_px: 35.0,
        missing_rate: 0.04,
        ad_hold_rate: 0.25,
        w_m1_rate: 0.14,
        bpm_base: 88.0,
    };
    (professional, amateur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rounds: u32,
    pub round_s: f64,
    pub gaze_rate_hz: f64,
    pub input_period_s: f64,
    pub screen: Screen,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            rounds: 12,
            round_s: 40.0,
            gaze_rate_hz: 60.0,
            input_period_s: DEFAULT_INPUT_PERIOD_S,
            screen: DEFAULT_SCREEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub session: Session,
    pub files: SessionFiles,
}

/// Whole microseconds, as seconds.
fn micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn millis(t: f64) -> f64 {
    (t * 1e3).round() / 1e3
}

/// Sub-stream identifiers so each file draws from its own sequence.
#[derive(Clone, Copy)]
enum Stream {
    Timeline = 1,
    Gaze = 2,
    Input = 3,
    Hrm = 4,
}

pub fn generate_session(
    profile: &CohortProfile,
    scenario: &Scenario,
    zones: &ZoneModel,
    meta: PlayerMeta,
    seed: u64,
) -> Result<GeneratedSession, SynthError> {
    profile.validate(zones.k())?;
    if scenario.rounds == 0
        || !(scenario.round_s > 0.0)
        || !(scenario.gaze_rate_hz > 0.0)
        || !(scenario.input_period_s > 0.0)
    {
        return Err(SynthError::InvalidProfile(
            "scenario needs positive rounds, durations and rates".into(),
        ));
    }
    let rng = |s: Stream| XorShift64Star::derive(seed, s as u64);

    let mut timeline = gen_timeline(&mut rng(Stream::Timeline), scenario, &meta.player_id);
    let gaze = gen_gaze(&mut rng(Stream::Gaze), profile, scenario, zones, &meta);
    let input = gen_input(&mut rng(Stream::Input), profile, scenario);
    let hrm = gen_beats(&mut rng(Stream::Hrm), profile, scenario, &meta);
    add_weapon_fire(&mut timeline, &input, &meta.player_id);

    let session = Session {
        meta,
        gaze,
        input,
        input_period_s: scenario.input_period_s,
        hrm: Some(hrm),
        timeline,
    };
    let files = SessionFiles::render(&session);
    Ok(GeneratedSession { session, files })
}

fn gen_timeline(rng: &mut XorShift64Star, scenario: &Scenario, player: &str) -> MatchTimeline {
    let mut rounds = Vec::new();
    let mut events = Vec::new();
    let ev = |t: f64, kind, subject: &str, object: Option<&str>| GameEvent {
        t,
        kind,
        subject: subject.to_string(),
        object: object.map(str::to_string),
    };
    for r in 0..scenario.rounds {
        let start = millis(r as f64 * scenario.round_s);
        let end = millis((r + 1) as f64 * scenario.round_s);
        rounds.push(Round {
            index: r + 1,
            start_t: start,
            end_t: end,
        });
        for who in std::iter::once(player).chain(OPPONENTS) {
            events.push(ev(start, EventKind::Spawn, who, None));
        }
        let len = end - start;
        let death = rng
            .chance(DEATH_PROBABILITY)
            .then(|| millis(start + rng.uniform(0.25, 0.95) * len));
        if rng.chance(0.5) {
            let victim = OPPONENTS[rng.below(2) as usize];
            let t = millis(start + rng.uniform(0.1, 0.2) * len);
            events.push(ev(t, EventKind::Kill, player, Some(victim)));
            events.push(ev(t, EventKind::Death, victim, None));
        }
        if let Some(t) = death {
            let killer = OPPONENTS[rng.below(2) as usize];
            events.push(ev(t, EventKind::Kill, killer, Some(player)));
            events.push(ev(t, EventKind::Death, player, None));
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    MatchTimeline { rounds, events }
}

fn gen_gaze(
    rng: &mut XorShift64Star,
    profile: &CohortProfile,
    scenario: &Scenario,
    zones: &ZoneModel,
    meta: &PlayerMeta,
) -> GazeSeries {
    let total_s = scenario.rounds as f64 * scenario.round_s;
    let n = (total_s * scenario.gaze_rate_hz).floor() as usize;
    let screen = scenario.screen;
    let m = profile.missing_rate;
    let run_continue = 1.0 - 1.0 / MEAN_DROPOUT_RUN;
    let run_start = if m >= 1.0 {
        1.0
    } else {
        (m / (MEAN_DROPOUT_RUN * (1.0 - m))).min(1.0)
    };

    let mut zone = rng.categorical(&profile.zone_dwell);
    let mut in_dropout = false;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = micros(i as f64 / scenario.gaze_rate_hz);
        if !rng.chance(profile.dwell_persistence) {
            zone = rng.categorical(&profile.zone_dwell);
        }
        let (cx, cy) = zones.centers()[zone];
        let x = (cx + profile.gaze_noise_px * rng.normal())
            .clamp(0.0, screen.width as f64)
            .round();
        let y = (cy + profile.gaze_noise_px * rng.normal())
            .clamp(0.0, screen.height as f64)
            .round();
        in_dropout = if m >= 1.0 {
            true
        } else if in_dropout {
            rng.chance(run_continue)
        } else {
            rng.chance(run_start)
        };
        samples.push(if in_dropout {
            GazeSample::missing(t)
        } else {
            GazeSample::valid(t, x, y)
        });
    }
    GazeSeries {
        player: meta.clone(),
        samples,
        nominal_rate_hz: scenario.gaze_rate_hz,
        screen,
    }
}

fn gen_input(rng: &mut XorShift64Star, profile: &CohortProfile, scenario: &Scenario) -> Vec<InputSample> {
    let total_s = scenario.rounds as f64 * scenario.round_s;
    let period = scenario.input_period_s;
    let n = (total_s / period).floor() as usize;
    let per_block = ((INPUT_BLOCK_S / period).round() as usize).max(1);
    let screen = scenario.screen;
    let rest = 1.0 - profile.w_m1_rate;

    let (mut x, mut y) = (screen.width as f64 / 2.0, screen.height as f64 / 2.0);
    let (mut vx, mut vy) = (0.0, 0.0);
    let mut block = KeySet::EMPTY;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i % per_block == 0 {
            block = KeySet::EMPTY;
            if rng.chance(profile.ad_hold_rate) {
                block.insert(if rng.chance(0.5) { Key::A } else { Key::D });
            }
            let u = rng.next_f64();
            if u < profile.w_m1_rate {
                block.insert(Key::W);
                block.insert(Key::Mouse1);
            } else if u < profile.w_m1_rate + 0.4 * rest {
                block.insert(Key::W);
            } else if u < profile.w_m1_rate + 0.5 * rest {
                block.insert(Key::Mouse1);
            } else if rng.chance(0.05) {
                block.insert(Key::S);
            }
            if rng.chance(0.03) {
                block.insert(Key::Shift);
            }
            if rng.chance(0.01) {
                block.insert(Key::Space);
            }
        }
        vx = 0.9 * vx + 3.0 * rng.normal();
        vy = 0.9 * vy + 3.0 * rng.normal();
        x = (x + vx).clamp(0.0, screen.width as f64);
        y = (y + vy).clamp(0.0, screen.height as f64);
        samples.push(InputSample {
            t: micros(i as f64 * period),
            mouse_x: x.round(),
            mouse_y: y.round(),
            keys_down: block,
        });
    }
    samples
}

fn gen_beats(rng: &mut XorShift64Star, profile: &CohortProfile, scenario: &Scenario, meta: &PlayerMeta) -> BeatSeries {
    let total_s = scenario.rounds as f64 * scenario.round_s;
    let mean_ibi = 60.0 / profile.bpm_base;
    let mut t = rng.uniform(0.2, 1.0);
    let mut beat_times = Vec::new();
    while t < total_s {
        beat_times.push(micros(t));
        t += mean_ibi * (1.0 + BEAT_JITTER * (2.0 * rng.next_f64() - 1.0));
    }
    BeatSeries {
        player: meta.clone(),
        beat_times,
    }
}

/// One `weapon_fire` per MOUSE1 press while the player is alive.
fn add_weapon_fire(timeline: &mut MatchTimeline, input: &[InputSample], player: &str) {
    let alive = crate::preprocess::extract_alive_segments(timeline, player).unwrap_or_default();
    let fires: Vec<GameEvent> = crate::features::click_onsets(input, Key::Mouse1)
        .filter(|s| alive.iter().any(|iv| iv.contains(s.t)))
        .map(|s| GameEvent {
            t: s.t,
            kind: EventKind::WeaponFire,
            subject: player.to_string(),
            object: None,
        })
        .collect();
    timeline.events.extend(fires);
    timeline.events.sort_by(|a, b| a.t.total_cmp(&b.t));
}

/// Player id for the `ordinal`-th (1-based) member of a cohort.
pub fn player_id(cohort: Cohort, ordinal: usize) -> String {
    match cohort {
        Cohort::Professional => format!("pro{ordinal:02}"),
        Cohort::Amateur => format!("am{ordinal:02}"),
    }
}

/// One planned session of a study: which profile, who, and its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySlot {
    pub profile: usize,
    pub meta: PlayerMeta,
    pub seed: u64,
}

/// Lays out `count` sessions per profile. Session `j` (0-based over the whole
/// study) is seeded from `(seed, j)` and gets player index `j + 1`.
pub fn study_slots(groups: &[(CohortProfile, usize)], seed: u64) -> Vec<StudySlot> {
    let mut out = Vec::new();
    let mut ordinals = [0usize; 2];
    for (profile_index, (profile, count)) in groups.iter().enumerate() {
        for _ in 0..*count {
            let slot = &mut ordinals[profile.cohort as usize];
            *slot += 1;
            let j = out.len();
            out.push(StudySlot {
                profile: profile_index,
                meta: PlayerMeta {
                    player_id: player_id(profile.cohort, *slot),
                    cohort: profile.cohort,
                    index: j as u32 + 1,
                },
                seed: XorShift64Star::derive(seed, j as u64).next_u64(),
            });
        }
    }
    out
}

pub fn generate_study(
    groups: &[(CohortProfile, usize)],
    scenario: &Scenario,
    zones: &ZoneModel,
    seed: u64,
) -> Result<Vec<GeneratedSession>, SynthError> {
    study_slots(groups, seed)
        .into_iter()
        .map(|s| generate_session(&groups[s.profile].0, scenario, zones, s.meta, s.seed))
        .collect()
}
