//! Alive-segment extraction, gaze gap interpolation, missingness accounting
//! and heart-rate derivation.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{BeatSeries, EventKind, GazeSample, GazeSeries, Interval, MatchTimeline, Timestamped};

/// Resolution of on-disk timestamps. Gap durations within this distance of
/// the limit count as reaching it.
pub const TIME_RESOLUTION_S: f64 = 1e-6;

pub const DEFAULT_MAX_GAP_S: f64 = 0.1;
pub const DEFAULT_BPM_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("player `{0}` does not appear in the timeline")]
    UnknownPlayer(String),
    #[error("need at least {needed} beats, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("bpm window must span at least 2 beats, got {0}")]
    InvalidWindow(usize),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MissingReport {
    pub total_samples: usize,
    pub missing_samples: usize,
    pub missing_fraction: f64,
    /// Run length in samples -> number of runs.
    pub gap_histogram: BTreeMap<usize, usize>,
    pub interpolated_samples: usize,
}

impl MissingReport {
    fn from_samples(samples: &[GazeSample]) -> Self {
        let mut report = MissingReport {
            total_samples: samples.len(),
            ..Default::default()
        };
        for run in invalid_runs(samples) {
            report.missing_samples += run.len();
            *report.gap_histogram.entry(run.len()).or_default() += 1;
        }
        report.missing_fraction = ratio(report.missing_samples, report.total_samples);
        report
    }

    /// Fraction still missing once interpolated samples are discounted.
    pub fn remaining_fraction(&self) -> f64 {
        ratio(self.missing_samples - self.interpolated_samples, self.total_samples)
    }

    /// Sums two reports over disjoint sample sets.
    pub fn merge(&mut self, other: &MissingReport) {
        self.total_samples += other.total_samples;
        self.missing_samples += other.missing_samples;
        self.interpolated_samples += other.interpolated_samples;
        for (len, n) in &other.gap_histogram {
            *self.gap_histogram.entry(*len).or_default() += n;
        }
        self.missing_fraction = ratio(self.missing_samples, self.total_samples);
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Index ranges of maximal runs of invalid samples.
fn invalid_runs(samples: &[GazeSample]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if samples[i].valid {
            i += 1;
            continue;
        }
        let start = i;
        while i < samples.len() && !samples[i].valid {
            i += 1;
        }
        runs.push(start..i);
    }
    runs
}

/// One interval per round in which the player spawned, ending at the
/// player's first death after spawning or at the round end.
pub fn extract_alive_segments(timeline: &MatchTimeline, player_id: &str) -> Result<Vec<Interval>, PreprocessError> {
    if !timeline.players().contains(player_id) {
        return Err(PreprocessError::UnknownPlayer(player_id.to_string()));
    }
    let mut per_round: Vec<(Option<f64>, Option<f64>)> = vec![(None, None); timeline.rounds.len()];
    for e in timeline.events.iter().filter(|e| e.subject == player_id) {
        let Some(r) = timeline.round_at(e.t) else { continue };
        let (spawn, death) = &mut per_round[r];
        match e.kind {
            EventKind::Spawn if spawn.is_none() => *spawn = Some(e.t),
            EventKind::Death if death.is_none() && spawn.is_some_and(|s| e.t >= s) => *death = Some(e.t),
            _ => {}
        }
    }
    Ok(timeline
        .rounds
        .iter()
        .zip(per_round)
        .filter_map(|(round, (spawn, death))| Interval::new(spawn?, death.unwrap_or(round.end_t)))
        .collect())
}

/// Splits a time-ordered slice into one sub-slice per interval, keeping the
/// samples with `start <= t < end`.
pub fn slice_by_intervals<'a, T: Timestamped>(samples: &'a [T], intervals: &[Interval]) -> Vec<&'a [T]> {
    intervals
        .iter()
        .map(|iv| {
            let lo = samples.partition_point(|s| s.t() < iv.start);
            let hi = samples.partition_point(|s| s.t() < iv.end);
            &samples[lo..hi.max(lo)]
        })
        .collect()
}

/// Fills short interior dropouts by linear interpolation.
///
/// A run of invalid samples is filled when it has valid neighbours on both
/// sides and the time from its first to its last missing sample is shorter
/// than `max_gap_s`. At 60 Hz and 0.1 s that admits runs of up to 6 samples.
/// Runs touching either end of the segment are left alone.
pub fn interpolate_gaps(segment: &[GazeSample], max_gap_s: f64) -> (Vec<GazeSample>, MissingReport) {
    let mut out = segment.to_vec();
    let mut report = MissingReport::from_samples(segment);
    for run in invalid_runs(segment) {
        if run.start == 0 || run.end == segment.len() {
            continue;
        }
        let duration = segment[run.end - 1].t - segment[run.start].t;
        if duration >= max_gap_s - TIME_RESOLUTION_S {
            continue;
        }
        let before = segment[run.start - 1];
        let after = segment[run.end];
        let span = after.t - before.t;
        for s in &mut out[run.clone()] {
            let w = (s.t - before.t) / span;
            s.x = before.x + (after.x - before.x) * w;
            s.y = before.y + (after.y - before.y) * w;
            s.valid = true;
        }
        report.interpolated_samples += run.len();
    }
    (out, report)
}

/// Missingness over a whole series, before any interpolation.
pub fn missing_stats(series: &GazeSeries) -> MissingReport {
    MissingReport::from_samples(&series.samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpmSample {
    pub t: f64,
    pub bpm: f64,
}

/// Trailing-window heart rate: at each beat, the number of intervals in the
/// last `window_beats` beats divided by the time they span.
pub fn beats_to_bpm(beats: &BeatSeries, window_beats: usize) -> Result<Vec<BpmSample>, PreprocessError> {
    if window_beats < 2 {
        return Err(PreprocessError::InvalidWindow(window_beats));
    }
    let times = &beats.beat_times;
    if times.len() < window_beats {
        return Err(PreprocessError::InsufficientData {
            needed: window_beats,
            have: times.len(),
        });
    }
    let intervals = (window_beats - 1) as f64;
    Ok(times
        .windows(window_beats)
        .map(|w| {
            let last = w[window_beats - 1];
            BpmSample {
                t: last,
                bpm: 60.0 * intervals / (last - w[0]),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixtures, GameEvent, Round};
    use proptest::prelude::*;

    fn timeline(rounds: &[(f64, f64)], events: &[(f64, EventKind)]) -> MatchTimeline {
        MatchTimeline {
            rounds: rounds
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| Round {
                    index: i as u32 + 1,
                    start_t: s,
                    end_t: e,
                })
                .collect(),
            events: events
                .iter()
                .map(|&(t, kind)| GameEvent {
                    t,
                    kind,
                    subject: "p1".into(),
                    object: None,
                })
                .collect(),
        }
    }

    #[test]
    fn alive_until_death() {
        let tl = timeline(&[(0.0, 40.0)], &[(0.0, EventKind::Spawn), (25.0, EventKind::Death)]);
        assert_eq!(
            extract_alive_segments(&tl, "p1").unwrap(),
            vec![Interval { start: 0.0, end: 25.0 }]
        );
    }

    #[test]
    fn survived_round_ends_at_round_end() {
        let tl = timeline(&[(0.0, 40.0)], &[(0.0, EventKind::Spawn)]);
        assert_eq!(
            extract_alive_segments(&tl, "p1").unwrap(),
            vec![Interval { start: 0.0, end: 40.0 }]
        );
    }

    #[test]
    fn one_interval_per_spawned_round() {
        let tl = timeline(
            &[(0.0, 40.0), (40.0, 80.0), (80.0, 120.0)],
            &[
                (0.0, EventKind::Spawn),
                (30.0, EventKind::Death),
                (40.0, EventKind::Spawn),
            ],
        );
        let alive = extract_alive_segments(&tl, "p1").unwrap();
        assert_eq!(
            alive,
            vec![Interval { start: 0.0, end: 30.0 }, Interval { start: 40.0, end: 80.0 }]
        );
        assert_eq!(
            extract_alive_segments(&tl, "nobody"),
            Err(PreprocessError::UnknownPlayer("nobody".into()))
        );
    }

    fn samples(n: usize, rate: f64) -> Vec<GazeSample> {
        (0..n)
            .map(|i| GazeSample::valid(i as f64 / rate, i as f64, 0.0))
            .collect()
    }

    #[test]
    fn slicing_by_intervals() {
        let s = samples(100, 1.0);
        let segs = slice_by_intervals(&s, &[Interval { start: 0.0, end: 40.0 }]);
        assert_eq!(segs[0].len(), 40);
        let segs = slice_by_intervals(
            &s,
            &[Interval {
                start: 200.0,
                end: 300.0,
            }],
        );
        assert!(segs[0].is_empty());
        let segs = slice_by_intervals(
            &s,
            &[Interval { start: 10.0, end: 20.0 }, Interval { start: 50.0, end: 75.5 }],
        );
        assert_eq!(segs[0].len() + segs[1].len(), 10 + 26);
        assert_eq!(segs[1][0].t, 50.0);
    }

    #[test]
    fn short_gap_filled_on_the_line() {
        let seg = vec![
            GazeSample::valid(0.0, 0.0, 0.0),
            GazeSample::missing(0.0125),
            GazeSample::missing(0.025),
            GazeSample::valid(0.05, 10.0, 4.0),
        ];
        let (out, report) = interpolate_gaps(&seg, 0.1);
        assert!(out.iter().all(|s| s.valid));
        for s in &out {
            assert_eq!(s.x, 10.0 * (s.t / 0.05));
            assert_eq!(s.y, 4.0 * (s.t / 0.05));
        }
        assert_eq!(report.interpolated_samples, 2);
        assert_eq!(report.missing_samples, 2);
    }

    #[test]
    fn long_gap_left_missing() {
        // 10 samples at 60 Hz missing: 0.15 s
        let mut seg = samples(30, 60.0);
        for s in &mut seg[5..15] {
            s.valid = false;
        }
        let (out, report) = interpolate_gaps(&seg, 0.1);
        assert!(out[5..15].iter().all(|s| !s.valid));
        assert_eq!(report.missing_samples, 10);
        assert_eq!(report.interpolated_samples, 0);
        assert_eq!(report.gap_histogram.get(&10), Some(&1));
    }

    #[test]
    fn boundary_gaps_never_extrapolated() {
        let mut seg = samples(10, 60.0);
        seg[0].valid = false;
        seg[9].valid = false;
        let (out, report) = interpolate_gaps(&seg, 0.1);
        assert!(!out[0].valid && !out[9].valid);
        assert_eq!(report.interpolated_samples, 0);
    }

    #[test]
    fn six_samples_is_the_limit_at_60hz() {
        for (n, filled) in [(6, true), (7, false)] {
            let mut seg = samples(20, 60.0);
            for s in &mut seg[3..3 + n] {
                s.valid = false;
            }
            let (out, _) = interpolate_gaps(&seg, 0.1);
            assert_eq!(out[3].valid, filled, "run of {n}");
        }
    }

    #[test]
    fn missing_stats_fractions() {
        let mut s = fixtures::session().gaze;
        s.samples.truncate(100);
        assert_eq!(missing_stats(&s).missing_fraction, 0.0);
        for i in [3, 30, 31, 77] {
            s.samples[i].valid = false;
        }
        let r = missing_stats(&s);
        assert_eq!(r.missing_fraction, 0.04);
        assert_eq!(r.gap_histogram, BTreeMap::from([(1, 2), (2, 1)]));
        for g in &mut s.samples {
            g.valid = false;
        }
        assert_eq!(missing_stats(&s).missing_fraction, 1.0);
    }

    fn beats(step: f64, n: usize) -> BeatSeries {
        BeatSeries {
            player: fixtures::meta(),
            beat_times: (0..n).map(|i| 1.0 + i as f64 * step).collect(),
        }
    }

    #[test]
    fn bpm_from_constant_intervals() {
        let bpm = beats_to_bpm(&beats(0.5, 20), 4).unwrap();
        assert_eq!(bpm.len(), 17);
        assert!(bpm.iter().all(|b| b.bpm == 120.0));
        assert!(beats_to_bpm(&beats(1.0, 10), 4).unwrap().iter().all(|b| b.bpm == 60.0));
        assert_eq!(
            beats_to_bpm(&beats(1.0, 3), 4),
            Err(PreprocessError::InsufficientData { needed: 4, have: 3 })
        );
        assert_eq!(beats_to_bpm(&beats(1.0, 3), 1), Err(PreprocessError::InvalidWindow(1)));
    }

    fn arb_segment() -> impl Strategy<Value = Vec<GazeSample>> {
        prop::collection::vec((0.0f64..1920.0, 0.0f64..1080.0, prop::bool::weighted(0.3)), 1..200).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (x, y, missing))| GazeSample {
                    t: i as f64 / 60.0,
                    x,
                    y,
                    valid: !missing,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn interpolation_preserves_valid_and_stays_in_bounds(seg in arb_segment()) {
            let (out, report) = interpolate_gaps(&seg, 0.1);
            let mut last_valid: Option<GazeSample> = None;
            for (i, (a, b)) in seg.iter().zip(&out).enumerate() {
                if a.valid {
                    prop_assert_eq!(a, b);
                    last_valid = Some(*a);
                } else if b.valid {
                    let before = last_valid.unwrap();
                    let after = seg[i..].iter().find(|s| s.valid).unwrap();
                    let (lo, hi) = (before.x.min(after.x), before.x.max(after.x));
                    prop_assert!(b.x >= lo - 1e-9 && b.x <= hi + 1e-9);
                    let (lo, hi) = (before.y.min(after.y), before.y.max(after.y));
                    prop_assert!(b.y >= lo - 1e-9 && b.y <= hi + 1e-9);
                }
            }
            let still_missing = out.iter().filter(|s| !s.valid).count();
            prop_assert_eq!(report.missing_samples - report.interpolated_samples, still_missing);
            let before = report.missing_fraction;
            let after = report.remaining_fraction();
            let moved = report.interpolated_samples as f64 / report.total_samples as f64;
            prop_assert!((after + moved - before).abs() < 1e-12);
        }

        #[test]
        fn slicing_a_partition_loses_nothing(n in 0usize..300, cuts in prop::collection::vec(0.0f64..10.0, 0..6)) {
            let s = samples(n, 30.0);
            let mut bounds = vec![0.0];
            let mut cuts = cuts;
            cuts.sort_by(f64::total_cmp);
            bounds.extend(cuts);
            bounds.push(11.0);
            let intervals: Vec<Interval> = bounds.windows(2).filter_map(|w| Interval::new(w[0], w[1])).collect();
            let segs = slice_by_intervals(&s, &intervals);
            let joined: Vec<GazeSample> = segs.concat();
            prop_assert_eq!(joined, s);
        }
    }
}
