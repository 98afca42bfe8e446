//! Keyboard and mouse behaviour features from sampled input state.
//!
//! Each input sample stands for the key state over `[t, t + period)`, where
//! `period` is the logger's nominal cadence.

use serde::Serialize;
use thiserror::Error;

use crate::model::{InputSample, Interval, Key, KeySet};
use crate::preprocess::slice_by_intervals;
use crate::zones::{assign_zone, ZoneModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("alive time is zero")]
    EmptySupport,
    #[error("need at least two input samples inside alive time")]
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldInterval {
    pub key: Key,
    pub interval: Interval,
}

/// How a sample's key set is matched against the queried keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// At least one queried key is down.
    Any,
    /// Every queried key is down.
    All,
}

impl MatchMode {
    pub fn matches(self, keys: KeySet, down: KeySet) -> bool {
        match self {
            MatchMode::Any => keys.intersects(down),
            MatchMode::All => keys.is_subset_of(down),
        }
    }
}

/// Maximal runs of consecutive samples satisfying `pred`. A run closes at
/// the next sample's time, or one period after the last sample.
fn runs<F: Fn(&InputSample) -> bool>(samples: &[InputSample], period_s: f64, pred: F) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    for s in samples {
        match (pred(s), start) {
            (true, None) => start = Some(s.t),
            (false, Some(st)) => {
                out.extend(Interval::new(st, s.t));
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(st), Some(last)) = (start, samples.last()) {
        out.extend(Interval::new(st, last.t + period_s));
    }
    out
}

pub fn key_hold_intervals(samples: &[InputSample], key: Key, period_s: f64) -> Vec<HoldInterval> {
    runs(samples, period_s, |s| s.keys_down.contains(key))
        .into_iter()
        .map(|interval| HoldInterval { key, interval })
        .collect()
}

fn total_duration(alive: &[Interval]) -> f64 {
    alive.iter().map(Interval::duration).sum()
}

/// Seconds of alive time during which the key state matches.
pub fn held_duration(samples: &[InputSample], keys: KeySet, alive: &[Interval], mode: MatchMode, period_s: f64) -> f64 {
    alive
        .iter()
        .map(|iv| {
            // samples starting up to one period early still overlap the interval
            let lo = samples.partition_point(|s| s.t + period_s <= iv.start);
            let hi = samples.partition_point(|s| s.t < iv.end);
            samples[lo..hi.max(lo)]
                .iter()
                .filter(|s| mode.matches(keys, s.keys_down))
                .map(|s| iv.overlap(s.t, s.t + period_s))
                .sum::<f64>()
        })
        .sum()
}

/// Fraction of alive time during which the key state matches.
pub fn fraction_held(
    samples: &[InputSample],
    keys: KeySet,
    alive: &[Interval],
    mode: MatchMode,
    period_s: f64,
) -> Result<f64, FeatureError> {
    let total = total_duration(alive);
    if !(total > 0.0) {
        return Err(FeatureError::EmptySupport);
    }
    Ok(held_duration(samples, keys, alive, mode, period_s) / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClickStats {
    pub click_count: usize,
    pub mean_duration_s: f64,
    pub clicks_per_minute: f64,
}

/// Clicks are hold intervals of `button` clipped to alive time.
pub fn click_stats(
    samples: &[InputSample],
    button: Key,
    alive: &[Interval],
    period_s: f64,
) -> Result<ClickStats, FeatureError> {
    let total = total_duration(alive);
    if !(total > 0.0) {
        return Err(FeatureError::EmptySupport);
    }
    let holds = key_hold_intervals(samples, button, period_s);
    let clicks: Vec<f64> = holds
        .iter()
        .flat_map(|h| alive.iter().filter_map(move |iv| h.interval.intersect(iv)))
        .map(|iv| iv.duration())
        .collect();
    let click_count = clicks.len();
    let mean_duration_s = if click_count == 0 {
        0.0
    } else {
        clicks.iter().sum::<f64>() / click_count as f64
    };
    Ok(ClickStats {
        click_count,
        mean_duration_s,
        clicks_per_minute: click_count as f64 / (total / 60.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MouseKinematics {
    pub path_mean_px: f64,
    pub path_std_px: f64,
    pub vel_mean_px_s: f64,
    pub vel_std_px_s: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn step(a: &InputSample, b: &InputSample) -> f64 {
    (b.mouse_x - a.mouse_x).hypot(b.mouse_y - a.mouse_y)
}

/// Path length per `window_s` window and speed per consecutive sample pair,
/// within each alive interval. Windows tile each interval from its start;
/// the last one may be shorter.
pub fn mouse_kinematics(
    samples: &[InputSample],
    alive: &[Interval],
    window_s: f64,
) -> Result<MouseKinematics, FeatureError> {
    assert!(window_s > 0.0, "window must be positive");
    let mut paths = Vec::new();
    let mut speeds = Vec::new();
    for (iv, seg) in alive.iter().zip(slice_by_intervals(samples, alive)) {
        for pair in seg.windows(2) {
            let dt = pair[1].t - pair[0].t;
            speeds.push(step(&pair[0], &pair[1]) / dt);
        }
        let windows = (iv.duration() / window_s).ceil() as usize;
        for w in 0..windows {
            let start = iv.start + w as f64 * window_s;
            let lo = seg.partition_point(|s| s.t < start);
            let hi = seg.partition_point(|s| s.t < start + window_s);
            paths.push(seg[lo..hi.max(lo)].windows(2).map(|p| step(&p[0], &p[1])).sum());
        }
    }
    if speeds.is_empty() {
        return Err(FeatureError::InsufficientData);
    }
    let (path_mean_px, path_std_px) = mean_std(&paths);
    let (vel_mean_px_s, vel_std_px_s) = mean_std(&speeds);
    Ok(MouseKinematics {
        path_mean_px,
        path_std_px,
        vel_mean_px_s,
        vel_std_px_s,
    })
}

/// Samples at which `button` goes down.
pub fn click_onsets(samples: &[InputSample], button: Key) -> impl Iterator<Item = &InputSample> {
    samples.iter().enumerate().filter_map(move |(i, s)| {
        let down = s.keys_down.contains(button);
        let was_down = i > 0 && samples[i - 1].keys_down.contains(button);
        (down && !was_down).then_some(s)
    })
}

/// Zone shares of the mouse position at each click onset; all zeros when
/// there are no clicks.
pub fn click_zone_distribution(samples: &[InputSample], button: Key, model: &ZoneModel) -> Vec<f64> {
    let mut counts = vec![0usize; model.k()];
    for s in click_onsets(samples, button) {
        counts[assign_zone((s.mouse_x, s.mouse_y), model)] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0.0; model.k()];
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zones::default_zone_model;
    use proptest::prelude::*;

    const P: f64 = 0.01;

    /// 10 ms samples over `[0, secs)`; `keys(t)` gives the held set.
    fn timeline(secs: f64, keys: impl Fn(f64) -> KeySet) -> Vec<InputSample> {
        let n = (secs / P).round() as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                InputSample {
                    t,
                    mouse_x: 960.0,
                    mouse_y: 540.0,
                    keys_down: keys(t),
                }
            })
            .collect()
    }

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn hold_intervals() {
        let s = timeline(0.2, |t| {
            if t < 0.095 {
                KeySet::of(&[Key::W])
            } else {
                KeySet::EMPTY
            }
        });
        let h = key_hold_intervals(&s, Key::W, P);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].interval, iv(0.0, 0.1));
        assert!(key_hold_intervals(&s, Key::A, P).is_empty());

        let two = timeline(1.0, |t| {
            if !(0.2..=0.595).contains(&t) {
                KeySet::of(&[Key::W])
            } else {
                KeySet::EMPTY
            }
        });
        let h = key_hold_intervals(&two, Key::W, P);
        assert_eq!(h.len(), 2);
        assert_eq!(h[1].interval.end, 0.99 + P);
    }

    #[test]
    fn fraction_any() {
        let s = timeline(60.0, |t| {
            if t < 11.995 {
                KeySet::of(&[Key::A])
            } else if (20.0 - 0.005..26.0 - 0.005).contains(&t) {
                KeySet::of(&[Key::D])
            } else {
                KeySet::EMPTY
            }
        });
        let f = fraction_held(&s, KeySet::of(&[Key::A, Key::D]), &[iv(0.0, 60.0)], MatchMode::Any, P).unwrap();
        assert!((f - 0.3).abs() < 1e-9, "{f}");
    }

    #[test]
    fn fraction_all_is_overlap() {
        let s = timeline(60.0, |t| {
            let mut k = KeySet::EMPTY;
            if t < 10.0 - 0.005 {
                k.insert(Key::W);
            }
            if (5.0 - 0.005..15.0 - 0.005).contains(&t) {
                k.insert(Key::Mouse1);
            }
            k
        });
        let wm = KeySet::of(&[Key::W, Key::Mouse1]);
        let f = fraction_held(&s, wm, &[iv(0.0, 60.0)], MatchMode::All, P).unwrap();
        assert!((f - 5.0 / 60.0).abs() < 1e-9, "{f}");
        let none = fraction_held(&s, KeySet::of(&[Key::S]), &[iv(0.0, 60.0)], MatchMode::Any, P).unwrap();
        assert_eq!(none, 0.0);
        assert_eq!(
            fraction_held(&s, wm, &[], MatchMode::All, P),
            Err(FeatureError::EmptySupport)
        );
    }

    #[test]
    fn clicks() {
        let s = timeline(60.0, |t| {
            if (1.0 - 0.005..1.1 - 0.005).contains(&t) || (30.0 - 0.005..30.3 - 0.005).contains(&t) {
                KeySet::of(&[Key::Mouse1])
            } else {
                KeySet::EMPTY
            }
        });
        let c = click_stats(&s, Key::Mouse1, &[iv(0.0, 60.0)], P).unwrap();
        assert_eq!(c.click_count, 2);
        assert!((c.mean_duration_s - 0.2).abs() < 1e-9);
        assert!((c.clicks_per_minute - 2.0).abs() < 1e-12);

        let quiet = click_stats(&timeline(60.0, |_| KeySet::EMPTY), Key::Mouse1, &[iv(0.0, 60.0)], P).unwrap();
        assert_eq!(
            quiet,
            ClickStats {
                click_count: 0,
                mean_duration_s: 0.0,
                clicks_per_minute: 0.0
            }
        );

        // click from 30.0 to 30.3 clipped by alive ending at 30.1
        let clipped = click_stats(&s, Key::Mouse1, &[iv(0.0, 30.1)], P).unwrap();
        assert_eq!(clipped.click_count, 2);
        assert!((clipped.mean_duration_s - (0.1 + 0.1) / 2.0).abs() < 1e-9);
    }

    fn at(t: f64, x: f64, y: f64) -> InputSample {
        InputSample {
            t,
            mouse_x: x,
            mouse_y: y,
            keys_down: KeySet::EMPTY,
        }
    }

    #[test]
    fn kinematics() {
        let k = mouse_kinematics(&[at(0.0, 0.0, 0.0), at(0.01, 3.0, 4.0)], &[iv(0.0, 1.0)], 1.0).unwrap();
        assert_eq!(k.path_mean_px, 5.0);
        assert!((k.vel_mean_px_s - 500.0).abs() < 1e-9);
        assert_eq!(k.vel_std_px_s, 0.0);

        let still: Vec<InputSample> = (0..100).map(|i| at(i as f64 * P, 7.0, 7.0)).collect();
        let k = mouse_kinematics(&still, &[iv(0.0, 1.0)], 0.25).unwrap();
        assert_eq!(
            k,
            MouseKinematics {
                path_mean_px: 0.0,
                path_std_px: 0.0,
                vel_mean_px_s: 0.0,
                vel_std_px_s: 0.0
            }
        );
        assert_eq!(
            mouse_kinematics(&[at(0.0, 0.0, 0.0)], &[iv(0.0, 1.0)], 1.0),
            Err(FeatureError::InsufficientData)
        );
    }

    #[test]
    fn click_zones() {
        let model = default_zone_model();
        let mut s = timeline(1.0, |t| {
            if (0.1..0.2).contains(&t) || (0.5..0.6).contains(&t) {
                KeySet::of(&[Key::Mouse1])
            } else {
                KeySet::EMPTY
            }
        });
        let d = click_zone_distribution(&s, Key::Mouse1, &model);
        assert_eq!(d[0], 1.0);
        for x in &mut s[45..] {
            x.mouse_x = 345.0;
            x.mouse_y = 815.0;
        }
        let d = click_zone_distribution(&s, Key::Mouse1, &model);
        assert_eq!(&d[..3], &[0.5, 0.5, 0.0]);
        assert!(
            click_zone_distribution(&timeline(1.0, |_| KeySet::EMPTY), Key::Mouse1, &model)
                .iter()
                .all(|&v| v == 0.0)
        );
    }

    fn arb_keys() -> impl Strategy<Value = Vec<InputSample>> {
        prop::collection::vec((0u32..16, 0.0f64..1920.0, 0.0f64..1080.0), 2..400).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (bits, x, y))| {
                    let keys = [Key::W, Key::A, Key::D, Key::Mouse1]
                        .into_iter()
                        .enumerate()
                        .filter(|(b, _)| bits & (1 << b) != 0)
                        .map(|(_, k)| k)
                        .collect();
                    InputSample {
                        t: i as f64 / 100.0,
                        mouse_x: x,
                        mouse_y: y,
                        keys_down: keys,
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn fraction_bounds_and_ordering(s in arb_keys(), a in 0.0f64..2.0, len in 0.1f64..3.0) {
            let alive = [iv(a, a + len)];
            let keys = KeySet::of(&[Key::W, Key::Mouse1]);
            let any = fraction_held(&s, keys, &alive, MatchMode::Any, P).unwrap();
            let all = fraction_held(&s, keys, &alive, MatchMode::All, P).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&any));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&all));
            prop_assert!(all <= any + 1e-12);
        }

        #[test]
        fn fraction_is_additive(s in arb_keys(), cut in 0.05f64..3.9) {
            let end = s.last().unwrap().t + P;
            let parts = [iv(0.0, cut.min(end - 1e-3)), iv(cut.min(end - 1e-3), end)];
            let keys = KeySet::of(&[Key::A, Key::D]);
            let whole = held_duration(&s, keys, &[iv(0.0, end)], MatchMode::Any, P);
            let sum: f64 = parts.iter().map(|p| {
                fraction_held(&s, keys, &[*p], MatchMode::Any, P).unwrap() * p.duration()
            }).sum();
            prop_assert!((whole - sum).abs() < 1e-9);
        }

        #[test]
        fn holds_and_releases_partition_the_timeline(s in arb_keys()) {
            let mut all: Vec<Interval> = runs(&s, P, |x| x.keys_down.contains(Key::W));
            all.extend(runs(&s, P, |x| !x.keys_down.contains(Key::W)));
            all.sort_by(|a, b| a.start.total_cmp(&b.start));
            prop_assert_eq!(all[0].start, s[0].t);
            prop_assert_eq!(all.last().unwrap().end, s.last().unwrap().t + P);
            for w in all.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
        }

        #[test]
        fn click_zones_sum_to_one(s in arb_keys()) {
            let d = click_zone_distribution(&s, Key::Mouse1, &default_zone_model());
            let total: f64 = d.iter().sum();
            if click_onsets(&s, Key::Mouse1).next().is_some() {
                prop_assert!((total - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }
    }
}
