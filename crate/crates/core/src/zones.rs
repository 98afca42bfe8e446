//! Screen zones of interest: the zone model, gaze-to-zone assignment,
//! rolling-window zone distributions and gaze heatmaps.
//!
//! Zone indices are 0-based in code. Exported files number zones from 1.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::Serialize;
use thiserror::Error;

use crate::model::{GazeSample, Interval, Screen};
use crate::rng::XorShift64Star;

pub type Point = (f64, f64);

pub const DEFAULT_WINDOW_S: f64 = 15.0;
pub const DEFAULT_HOP_S: f64 = 1.0;
pub const DEFAULT_CELL_PX: u32 = 10;

const LLOYD_TOLERANCE_PX: f64 = 1e-6;
const LLOYD_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZoneError {
    #[error("zone model needs at least one center")]
    NoZones,
    #[error("centers and labels differ in length ({centers} vs {labels})")]
    LabelCount { centers: usize, labels: usize },
    #[error("zone centers {0} and {1} coincide")]
    DuplicateCenter(usize, usize),
    #[error("zone label `{0}` is used twice")]
    DuplicateLabel(String),
    #[error("zone label `{0}` is not representable in the zone CSV")]
    BadLabel(String),
    #[error("need at least {k} distinct points, have {distinct}")]
    DegenerateInput { k: usize, distinct: usize },
    #[error("fixed mode needs seed centers")]
    MissingSeeds,
    #[error("input is empty")]
    EmptyInput,
    #[error("expected {expected} zones, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zone csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// K labeled centers over screen space.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneModel {
    centers: Vec<Point>,
    labels: Vec<String>,
}

impl ZoneModel {
    pub fn new(centers: Vec<Point>, labels: Vec<String>) -> Result<Self, ZoneError> {
        if centers.is_empty() {
            return Err(ZoneError::NoZones);
        }
        if centers.len() != labels.len() {
            return Err(ZoneError::LabelCount {
                centers: centers.len(),
                labels: labels.len(),
            });
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i] == centers[j] {
                    return Err(ZoneError::DuplicateCenter(i, j));
                }
            }
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.contains([',', '\n', '\r']) {
                return Err(ZoneError::BadLabel(l.clone()));
            }
            if !seen.insert(l.as_str()) {
                return Err(ZoneError::DuplicateLabel(l.clone()));
            }
        }
        Ok(ZoneModel { centers, labels })
    }

    /// Centers labeled `Zone 1..K`.
    pub fn unlabeled(centers: Vec<Point>) -> Result<Self, ZoneError> {
        let labels = (1..=centers.len()).map(|k| format!("Zone {k}")).collect();
        ZoneModel::new(centers, labels)
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// CSV `k,label,x,y` with 1-based `k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,label,x,y\n");
        for (i, ((x, y), label)) in self.centers.iter().zip(&self.labels).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", i + 1, label, x, y);
        }
        out
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self, ZoneError> {
        let mut rows: Vec<(usize, String, Point)> = Vec::new();
        let mut header_seen = false;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| ZoneError::Csv { line: line_no, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if text != "k,label,x,y" {
                    return Err(err(format!("expected header `k,label,x,y`, found `{text}`")));
                }
                continue;
            }
            let cols: Vec<&str> = text.split(',').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 columns, found {}", cols.len())));
            }
            let k: usize = cols[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad zone number `{}`", cols[0])))?;
            let num = |s: &str| -> Result<f64, ZoneError> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("bad coordinate `{s}`")))
            };
            rows.push((k, cols[1].trim().to_string(), (num(cols[2])?, num(cols[3])?)));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i + 1) {
            return Err(ZoneError::Csv {
                line: 0,
                message: "zone numbers must run 1..K without gaps".into(),
            });
        }
        let (labels, centers) = rows.into_iter().map(|(_, l, c)| (l, c)).unzip();
        ZoneModel::new(centers, labels)
    }
}

/// The nine default zone centers, on a 1920x1080 screen with the origin
/// at the bottom-left corner.
pub fn default_zone_model() -> ZoneModel {
    let table: [(f64, f64, &str); 9] = [
        (960.0, 540.0, "Aiming Cross-hair"),
        (345.0, 815.0, "Radar Area"),
        (310.0, 180.0, "Armor & Health Bar"),
        (1205.0, 530.0, "Right Area of Sight"),
        (1610.0, 180.0, "Weapon & Ammo Panel"),
        (715.0, 530.0, "Left Area of Sight"),
        (1575.0, 815.0, "Kill & Death Log"),
        (960.0, 260.0, "Bottom Area of Sight"),
        (960.0, 900.0, "Timer & Players Panel"),
    ];
    ZoneModel::new(
        table.iter().map(|&(x, y, _)| (x, y)).collect(),
        table.iter().map(|&(_, _, l)| l.to_string()).collect(),
    )
    .expect("built-in table is a valid zone model")
}

fn dist2(a: Point, b: Point) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn nearest(point: Point, centers: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = dist2(point, centers[0]);
    for (k, &c) in centers.iter().enumerate().skip(1) {
        let d = dist2(point, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Nearest center by Euclidean distance; ties go to the lowest index.
pub fn assign_zone(point: Point, model: &ZoneModel) -> usize {
    nearest(point, &model.centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Use the seed centers as they are.
    Fixed,
    /// Lloyd iterations from the seeds, or from k-means++ when none are given.
    Lloyd,
    /// Greedy k-center, starting from the point nearest the centroid.
    FarthestFirst,
}

fn distinct_count(points: &[Point]) -> usize {
    points
        .iter()
        .map(|p| (p.0.to_bits(), p.1.to_bits()))
        .collect::<HashSet<_>>()
        .len()
}

/// Sum over points of the squared distance to the nearest center.
pub fn within_cluster_ss(points: &[Point], centers: &[Point]) -> f64 {
    points.iter().map(|&p| dist2(p, centers[nearest(p, centers)])).sum()
}

/// Builds a zone model from observed gaze points.
///
/// `seed` drives k-means++ initialisation and is ignored otherwise.
pub fn fit_zones(
    points: &[Point],
    k: usize,
    mode: FitMode,
    seeds: Option<&ZoneModel>,
    seed: u64,
) -> Result<ZoneModel, ZoneError> {
    if mode == FitMode::Fixed {
        return seeds.cloned().ok_or(ZoneError::MissingSeeds);
    }
    if points.is_empty() {
        return Err(ZoneError::EmptyInput);
    }
    let distinct = distinct_count(points);
    if k == 0 || distinct < k {
        return Err(ZoneError::DegenerateInput { k, distinct });
    }
    let centers = match mode {
        FitMode::Lloyd => {
            let init = match seeds {
                Some(m) if m.k() == k => m.centers.clone(),
                Some(m) => {
                    return Err(ZoneError::DimensionMismatch {
                        expected: k,
                        found: m.k(),
                    })
                }
                None => kmeans_plus_plus(points, k, seed),
            };
            lloyd(points, init).0
        }
        FitMode::FarthestFirst => farthest_first(points, k),
        FitMode::Fixed => unreachable!(),
    };
    match seeds {
        Some(m) if m.k() == k => ZoneModel::new(centers, m.labels.clone()),
        _ => ZoneModel::unlabeled(centers),
    }
    .map_err(|_| ZoneError::DegenerateInput { k, distinct })
}

fn kmeans_plus_plus(points: &[Point], k: usize, seed: u64) -> Vec<Point> {
    let mut rng = XorShift64Star::new(seed);
    let mut centers = vec![points[rng.below(points.len() as u64) as usize]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.next_f64() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick];
        centers.push(c);
        for (slot, &p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, c));
        }
    }
    centers
}

/// Runs Lloyd iterations, returning the centers and the within-cluster sum
/// of squares after every iteration.
fn lloyd(points: &[Point], mut centers: Vec<Point>) -> (Vec<Point>, Vec<f64>) {
    let k = centers.len();
    let mut history = Vec::new();
    for _ in 0..LLOYD_MAX_ITERATIONS {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for &p in points {
            let c = nearest(p, &centers);
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        let mut moved: f64 = 0.0;
        for (c, (sx, sy, n)) in centers.iter_mut().zip(sums) {
            // empty clusters keep their center
            if n > 0 {
                let next = (sx / n as f64, sy / n as f64);
                moved = moved.max(dist2(*c, next).sqrt());
                *c = next;
            }
        }
        history.push(within_cluster_ss(points, &centers));
        if moved < LLOYD_TOLERANCE_PX {
            break;
        }
    }
    (centers, history)
}

fn farthest_first(points: &[Point], k: usize) -> Vec<Point> {
    let n = points.len() as f64;
    let centroid = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let first = nearest(centroid, points);
    let mut centers = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let mut far = 0;
        for (i, &d) in d2.iter().enumerate() {
            if d > d2[far] {
                far = i;
            }
        }
        let c = points[far];
        centers.push(c);
        for (slot, &p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, c));
        }
    }
    centers
}

/// Zone labels for a run of gaze samples, with the time span they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSequence {
    pub times: Vec<f64>,
    pub zones: Vec<usize>,
    pub span: Interval,
}

impl ZoneSequence {
    /// Labels every valid sample of `segment`; invalid samples are skipped.
    pub fn from_segment(segment: &[GazeSample], span: Interval, model: &ZoneModel) -> Self {
        let (times, zones) = segment
            .iter()
            .filter_map(|s| Some((s.t, assign_zone(s.point()?, model))))
            .unzip();
        ZoneSequence { times, zones, span }
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowDistribution {
    /// Position of the window along its segment (0-based hop count).
    pub window_index: usize,
    pub window_start: f64,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedDistribution {
    pub probs: Vec<f64>,
}

fn histogram(zones: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &z in zones {
        counts[z] += 1;
    }
    let n = zones.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Zone frequencies over rolling windows that lie wholly inside the
/// sequence's span. Windows start at the span start and advance by `hop_s`;
/// windows holding no samples are skipped.
pub fn window_distributions(seq: &ZoneSequence, k: usize, window_s: f64, hop_s: f64) -> Vec<WindowDistribution> {
    assert!(window_s > 0.0 && hop_s > 0.0, "window and hop must be positive");
    let slack = seq.span.duration() - window_s;
    if slack < -crate::preprocess::TIME_RESOLUTION_S {
        return Vec::new();
    }
    let count = ((slack.max(0.0) + crate::preprocess::TIME_RESOLUTION_S) / hop_s).floor() as usize + 1;
    (0..count)
        .filter_map(|n| {
            let start = seq.span.start + n as f64 * hop_s;
            let lo = seq.times.partition_point(|&t| t < start);
            let hi = seq.times.partition_point(|&t| t < start + window_s);
            (hi > lo).then(|| WindowDistribution {
                window_index: n,
                window_start: start,
                probs: histogram(&seq.zones[lo..hi], k),
            })
        })
        .collect()
}

/// Arithmetic mean of window distributions.
pub fn average_distribution(windows: &[WindowDistribution]) -> Result<AveragedDistribution, ZoneError> {
    let first = windows.first().ok_or(ZoneError::EmptyInput)?;
    let k = first.probs.len();
    let mut sum = vec![0.0; k];
    for w in windows {
        if w.probs.len() != k {
            return Err(ZoneError::DimensionMismatch {
                expected: k,
                found: w.probs.len(),
            });
        }
        for (s, p) in sum.iter_mut().zip(&w.probs) {
            *s += p;
        }
    }
    let n = windows.len() as f64;
    Ok(AveragedDistribution {
        probs: sum.into_iter().map(|s| s / n).collect(),
    })
}

/// Share of samples in each zone.
pub fn zone_shares(zones: &[usize], k: usize) -> Result<Vec<f64>, ZoneError> {
    if zones.is_empty() {
        return Err(ZoneError::EmptyInput);
    }
    Ok(histogram(zones, k))
}

/// Gaze counts binned on a regular grid of square cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub cell_px: u32,
    /// Row-major, row 0 at y = 0.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    /// Counts divided by the total; all zeros when empty.
    pub fn normalized(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        let total = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn merge(&mut self, other: &Heatmap) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "heatmap shapes differ"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Normalized grid as CSV, one line per row starting at y = 0.
    pub fn to_csv(&self) -> String {
        let norm = self.normalized();
        let mut out = String::new();
        for row in norm.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain PGM (P2) scaled so the busiest cell is 255. The top image row
    /// is the top of the screen (largest y).
    pub fn to_pgm(&self) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for row in (0..self.rows).rev() {
            let line: Vec<String> = (0..self.cols)
                .map(|col| {
                    let c = self.get(row, col);
                    (c * 255 + max / 2).checked_div(max).unwrap_or(0).to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Bins points into `cell_px` squares. Points past the right or bottom edge
/// clamp into the last cell.
pub fn heatmap_grid(points: &[Point], screen: Screen, cell_px: u32) -> Heatmap {
    assert!(cell_px >= 1, "cell size must be at least one pixel");
    let cols = (screen.width.div_ceil(cell_px) as usize).max(1);
    let rows = (screen.height.div_ceil(cell_px) as usize).max(1);
    let mut counts = vec![0u64; rows * cols];
    let cell = cell_px as f64;
    let bin = |v: f64, n: usize| ((v / cell).floor().max(0.0) as usize).min(n - 1);
    for &(x, y) in points {
        counts[bin(y, rows) * cols + bin(x, cols)] += 1;
    }
    Heatmap {
        rows,
        cols,
        cell_px,
        counts,
        total: points.len() as u64,
    }
}
