//! Batch commands behind the `etk` binary. Each command returns a process
//! exit status; diagnostics go to the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use etk_core::ingest::{load_session_dir, LoadError, DEMO_FILE, GAZE_FILE, HRM_FILE, INPUT_FILE, META_FILE};
use etk_core::model::{Cohort, Screen, Session};
use etk_core::numerics::{
    dominant_coordinate, KdeModel, NumericsError, PcaModel, DEFAULT_DOMINANCE_RATIO, KDE_GRID_POINTS,
};
use etk_core::pipeline::{analyze_session, fit_study_pca, AnalysisConfig, PlayerAnalysis};
use etk_core::synth::{default_profiles, generate_session, study_slots, CohortProfile, Scenario};
use etk_core::zones::{default_zone_model, heatmap_grid, Heatmap, ZoneModel, DEFAULT_CELL_PX};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_ASSEMBLY: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// Per-round features that get a density curve.
const KDE_FEATURES: [&str; 3] = ["ad_hold_fraction", "w_mouse1_fraction", "clicks_per_minute"];

#[derive(Debug, Clone, PartialEq)]
pub enum ZoneSource {
    Default,
    File(PathBuf),
}

impl ZoneSource {
    pub fn parse(s: &str) -> Self {
        if s == "default" {
            ZoneSource::Default
        } else {
            ZoneSource::File(PathBuf::from(s))
        }
    }

    fn load(&self) -> anyhow::Result<ZoneModel> {
        match self {
            ZoneSource::Default => Ok(default_zone_model()),
            ZoneSource::File(p) => {
                let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                ZoneModel::from_csv(std::io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            ZoneSource::Default => "default".into(),
            ZoneSource::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Bandwidth::Auto);
        }
        match s.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            _ => Err(format!("expected \"auto\" or a positive number, got {s:?}")),
        }
    }

    fn describe(self) -> String {
        match self {
            Bandwidth::Auto => "auto".into(),
            Bandwidth::Fixed(h) => h.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sessions: Vec<PathBuf>,
    pub zones: ZoneSource,
    pub window_s: f64,
    pub hop_s: f64,
    pub bandwidth: Bandwidth,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(sessions: Vec<PathBuf>, out: PathBuf) -> Self {
        RunConfig {
            sessions,
            zones: ZoneSource::Default,
            window_s: etk_core::zones::DEFAULT_WINDOW_S,
            hop_s: etk_core::zones::DEFAULT_HOP_S,
            bandwidth: Bandwidth::Auto,
            out,
            seed: 0,
            jobs: 0,
        }
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool")
}

fn load_exit_code(e: &LoadError) -> i32 {
    match e {
        LoadError::Io { .. } | LoadError::Meta { .. } | LoadError::Parse { .. } => EXIT_PARSE,
        LoadError::MissingFile(_) | LoadError::Assembly { .. } => EXIT_ASSEMBLY,
    }
}

fn load_all(paths: &[PathBuf], jobs: usize) -> Vec<Result<Session, LoadError>> {
    pool(jobs).install(|| paths.par_iter().map(|p| load_session_dir(p)).collect())
}

/// Writes `contents` to a sibling temp file, then renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub code: i32,
    pub summary: serde_json::Value,
}

/// Loads and validates each session directory. The exit status is that of
/// the first failing directory in argument order.
pub fn cmd_ingest(paths: &[PathBuf], jobs: usize) -> IngestOutcome {
    let mut code = EXIT_OK;
    let mut entries = Vec::new();
    for (path, result) in paths.iter().zip(load_all(paths, jobs)) {
        match result {
            Ok(s) => entries.push(json!({
                "path": path.display().to_string(),
                "status": "ok",
                "player_id": s.meta.player_id,
                "cohort": s.meta.cohort,
                "rounds": s.timeline.rounds.len(),
                "events": s.timeline.events.len(),
                "gaze_samples": s.gaze.samples.len(),
                "gaze_missing_fraction": etk_core::preprocess::missing_stats(&s.gaze).missing_fraction,
                "input_samples": s.input.len(),
                "beats": s.hrm.as_ref().map(|h| h.beat_times.len()),
            })),
            Err(e) => {
                let c = load_exit_code(&e);
                if code == EXIT_OK {
                    code = c;
                }
                log::error!("{e}");
                entries.push(json!({
                    "path": path.display().to_string(),
                    "status": "error",
                    "exit_code": c,
                    "error": e.to_string(),
                }));
            }
        }
    }
    IngestOutcome {
        code,
        summary: json!({ "sessions": entries }),
    }
}

/// Runs the full analysis and writes every artifact under `config.out`.
pub fn cmd_analyze(config: &RunConfig) -> i32 {
    match analyze(config) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            EXIT_FAILURE
        }
    }
}

fn analyze(config: &RunConfig) -> anyhow::Result<i32> {
    if config.sessions.is_empty() {
        log::error!("no session directories given");
        return Ok(EXIT_PARSE);
    }
    if !(config.window_s > 0.0 && config.hop_s > 0.0) {
        log::error!("window and hop must be positive");
        return Ok(EXIT_PARSE);
    }
    let zones = match config.zones.load() {
        Ok(z) => z,
        Err(e) => {
            log::error!("{e:#}");
            return Ok(EXIT_PARSE);
        }
    };

    let mut sessions = Vec::new();
    for result in load_all(&config.sessions, config.jobs) {
        match result {
            Ok(s) => sessions.push(s),
            Err(e) => {
                log::error!("{e}");
                return Ok(load_exit_code(&e));
            }
        }
    }
    let mut ids: Vec<&str> = sessions.iter().map(|s| s.meta.player_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        log::error!("player {} appears in more than one session", w[0]);
        return Ok(EXIT_ASSEMBLY);
    }

    let analysis = AnalysisConfig {
        zones,
        window_s: config.window_s,
        hop_s: config.hop_s,
        ..AnalysisConfig::default()
    };
    let players: Vec<PlayerAnalysis> = match pool(config.jobs).install(|| {
        sessions
            .par_iter()
            .map(|s| analyze_session(s, &analysis))
            .collect::<Result<Vec<_>, _>>()
    }) {
        Ok(p) => p,
        Err(e) => {
            log::error!("{e}");
            return Ok(EXIT_ASSEMBLY);
        }
    };
    info!("analyzed {} sessions", players.len());

    let mut out = Outputs::new(&config.out)?;
    let k = analysis.zones.k();
    out.put("missing_reports.json", missing_json(&players))?;
    out.put("windows.csv", windows_csv(&players, k))?;
    out.put("averages.csv", averages_csv(&players, k))?;
    out.put("zones.csv", analysis.zones.to_csv())?;
    out.put("features.csv", features_csv(&players))?;
    out.put("kde.csv", kde_csv(&players, config.bandwidth)?)?;
    for (cohort, map) in cohort_heatmaps(&players, &sessions) {
        out.put(&format!("heatmap_{cohort}.csv"), map.to_csv())?;
        out.put(&format!("heatmap_{cohort}.pgm"), map.to_pgm())?;
    }

    let mut code = EXIT_OK;
    if players.len() < 2 {
        warn!("PCA needs at least two sessions; skipping");
    } else {
        match fit_study_pca(&players) {
            Ok(pca) => {
                out.put("pca_model.json", pca_json(&pca, &analysis.zones))?;
                out.put("projections.csv", projections_csv(&players, &pca)?)?;
            }
            Err(e @ (NumericsError::DegenerateData | NumericsError::TooFew { .. })) => {
                log::error!("PCA input is degenerate: {e}");
                code = EXIT_DEGENERATE;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let inputs = config
        .sessions
        .iter()
        .map(|dir| digest_session_dir(dir).map(|files| json!({ "path": dir.display().to_string(), "files": files })))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = json!({
        "command": "analyze",
        "version": env!("CARGO_PKG_VERSION"),
        "config": {
            "zones": config.zones.describe(),
            "zones_sha256": sha256_hex(analysis.zones.to_csv().as_bytes()),
            "window_s": config.window_s,
            "hop_s": config.hop_s,
            "max_gap_s": analysis.max_gap_s,
            "bandwidth": config.bandwidth.describe(),
            "seed": config.seed,
        },
        "inputs": inputs,
        "outputs": out.digests,
        "exit_code": code,
    });
    write_atomic(&config.out.join("manifest.json"), pretty_json(&manifest).as_bytes())?;
    Ok(code)
}

/// Collects output files and their digests.
struct Outputs {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            digests: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, contents: String) -> anyhow::Result<()> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.digests.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }
}

fn digest_session_dir(dir: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for name in [META_FILE, GAZE_FILE, INPUT_FILE, HRM_FILE, DEMO_FILE] {
        let path = dir.join(name);
        if path.exists() {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            files.insert(name.to_string(), sha256_hex(&bytes));
        }
    }
    Ok(files)
}

fn zone_columns(k: usize) -> String {
    (1..=k).map(|z| format!("p{z}")).collect::<Vec<_>>().join(",")
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn missing_json(players: &[PlayerAnalysis]) -> String {
    let entries: Vec<_> = players
        .iter()
        .map(|p| {
            json!({
                "player_id": p.meta.player_id,
                "cohort": p.meta.cohort,
                "raw": p.missing,
                "alive": p.interpolation,
                "alive_remaining_fraction": p.interpolation.remaining_fraction(),
            })
        })
        .collect();
    pretty_json(&entries)
}

fn windows_csv(players: &[PlayerAnalysis], k: usize) -> String {
    let mut s = format!(
        "player_id,cohort,segment,window_index,window_start,{}\n",
        zone_columns(k)
    );
    for p in players {
        for w in &p.windows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.meta.player_id,
                p.meta.cohort,
                w.segment,
                w.window.window_index,
                w.window.window_start,
                join(&w.window.probs)
            );
        }
    }
    s
}

fn averages_csv(players: &[PlayerAnalysis], k: usize) -> String {
    let mut s = format!("player_id,cohort,windows,{}\n", zone_columns(k));
    for p in players {
        if let Some(avg) = &p.average {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                p.meta.player_id,
                p.meta.cohort,
                p.windows.len(),
                join(&avg.probs)
            );
        }
    }
    s
}

fn features_csv(players: &[PlayerAnalysis]) -> String {
    let mut s = String::from("player_id,cohort,round,feature,value\n");
    for p in players {
        for r in &p.rounds {
            for (name, value) in r.values() {
                let _ = writeln!(s, "{},{},{},{name},{value}", p.meta.player_id, p.meta.cohort, r.round);
            }
        }
    }
    s
}

fn cohorts_present(players: &[PlayerAnalysis]) -> Vec<Cohort> {
    let mut c: Vec<Cohort> = players.iter().map(|p| p.meta.cohort).collect();
    c.sort();
    c.dedup();
    c
}

fn kde_csv(players: &[PlayerAnalysis], bandwidth: Bandwidth) -> anyhow::Result<String> {
    let mut s = String::from("feature,cohort,bandwidth,x,density\n");
    for feature in KDE_FEATURES {
        for cohort in cohorts_present(players) {
            let values: Vec<f64> = players
                .iter()
                .filter(|p| p.meta.cohort == cohort)
                .flat_map(|p| &p.rounds)
                .flat_map(|r| r.values())
                .filter(|(name, _)| *name == feature)
                .map(|(_, v)| v)
                .collect();
            let model = match bandwidth {
                Bandwidth::Auto => KdeModel::with_silverman(values),
                Bandwidth::Fixed(h) => KdeModel::new(values, h),
            };
            let model = match model {
                Ok(m) => m,
                Err(e) => {
                    warn!("no density for {feature} ({cohort}): {e}");
                    continue;
                }
            };
            let h = model.bandwidth();
            for (x, d) in model.curve(KDE_GRID_POINTS) {
                let _ = writeln!(s, "{feature},{cohort},{h},{x},{d}");
            }
        }
    }
    Ok(s)
}

fn cohort_heatmaps(players: &[PlayerAnalysis], sessions: &[Session]) -> Vec<(Cohort, Heatmap)> {
    cohorts_present(players)
        .into_iter()
        .map(|cohort| {
            let members: Vec<(&PlayerAnalysis, &Session)> = players
                .iter()
                .zip(sessions)
                .filter(|(p, _)| p.meta.cohort == cohort)
                .collect();
            // grid of the first member's screen; points from larger screens clamp
            let screen: Screen = members[0].1.gaze.screen;
            let mut map = heatmap_grid(&[], screen, DEFAULT_CELL_PX);
            for (p, _) in members {
                map.merge(&heatmap_grid(&p.gaze_points, screen, DEFAULT_CELL_PX));
            }
            (cohort, map)
        })
        .collect()
}

fn pca_json(pca: &PcaModel, zones: &ZoneModel) -> String {
    let dominant: Vec<_> = pca
        .components
        .iter()
        .map(|c| {
            dominant_coordinate(c, DEFAULT_DOMINANCE_RATIO)
                .map(|(i, v)| json!({ "zone": i + 1, "label": zones.labels()[i], "loading": v }))
        })
        .collect();
    pretty_json(&json!({
        "zones": zones.labels(),
        "mean": pca.mean,
        "components": pca.components,
        "explained_variance": pca.explained_variance,
        "explained_ratio": pca.explained_ratio,
        "dominant_coordinate": dominant,
        "dominance_ratio": DEFAULT_DOMINANCE_RATIO,
    }))
}

/// 2-D projections: one row per window and one per player average.
fn projections_csv(players: &[PlayerAnalysis], pca: &PcaModel) -> anyhow::Result<String> {
    let dims = pca.components.len().min(2);
    let header: Vec<String> = (1..=dims).map(|d| format!("pc{d}")).collect();
    let mut s = format!("kind,player_id,cohort,segment,window_index,{}\n", header.join(","));
    for p in players {
        for w in &p.windows {
            let c = pca.project(&w.window.probs, dims)?;
            let _ = writeln!(
                s,
                "window,{},{},{},{},{}",
                p.meta.player_id,
                p.meta.cohort,
                w.segment,
                w.window.window_index,
                join(&c)
            );
        }
    }
    for p in players {
        if let Some(avg) = &p.average {
            let c = pca.project(&avg.probs, dims)?;
            let _ = writeln!(s, "average,{},{},,,{}", p.meta.player_id, p.meta.cohort, join(&c));
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Default,
    File(PathBuf),
}

impl ProfileSource {
    pub fn parse(s: &str) -> Self {
        if s == "default" {
            ProfileSource::Default
        } else {
            ProfileSource::File(PathBuf::from(s))
        }
    }
}

/// Profiles and their session counts. The default pair splits `count` one
/// third professional, the rest amateur; a profile file supplies one profile
/// for every session.
fn synth_groups(source: &ProfileSource, count: usize) -> anyhow::Result<Vec<(CohortProfile, usize)>> {
    match source {
        ProfileSource::Default => {
            let (pro, am) = default_profiles();
            let n_pro = count / 3;
            Ok(vec![(pro, n_pro), (am, count - n_pro)])
        }
        ProfileSource::File(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let profile: CohortProfile =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok(vec![(profile, count)])
        }
    }
}

/// Writes `count` synthetic session directories named by player id.
pub fn cmd_synth(profile: &ProfileSource, count: usize, seed: u64, out: &Path, jobs: usize) -> i32 {
    let groups = match synth_groups(profile, count) {
        Ok(g) => g,
        Err(e) => {
            log::error!("{e:#}");
            return EXIT_PARSE;
        }
    };
    let zones = default_zone_model();
    for (p, _) in &groups {
        if let Err(e) = p.validate(zones.k()) {
            log::error!("{e}");
            return EXIT_PARSE;
        }
    }
    if count == 0 {
        return EXIT_OK;
    }
    match synth(&groups, seed, out, jobs, &zones) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e:#}");
            EXIT_FAILURE
        }
    }
}

fn synth(
    groups: &[(CohortProfile, usize)],
    seed: u64,
    out: &Path,
    jobs: usize,
    zones: &ZoneModel,
) -> anyhow::Result<()> {
    let scenario = Scenario::default();
    let slots = study_slots(groups, seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    pool(jobs).install(|| {
        slots.par_iter().try_for_each(|slot| -> anyhow::Result<()> {
            let g = generate_session(&groups[slot.profile].0, &scenario, zones, slot.meta.clone(), slot.seed)?;
            let dir = out.join(&slot.meta.player_id);
            let tmp = out.join(format!(".{}.tmp", slot.meta.player_id));
            if tmp.exists() {
                fs::remove_dir_all(&tmp)?;
            }
            g.files
                .write_to(&tmp)
                .with_context(|| format!("writing {}", tmp.display()))?;
            if dir.exists() {
                fs::remove_dir_all(&dir).with_context(|| format!("replacing {}", dir.display()))?;
            }
            fs::rename(&tmp, &dir).with_context(|| format!("renaming into {}", dir.display()))
        })
    })?;
    let manifest = json!({
        "command": "synth",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "scenario": scenario,
        "profiles": groups.iter().map(|(p, n)| json!({ "profile": p, "count": n })).collect::<Vec<_>>(),
        "sessions": slots.iter().map(|s| json!({ "player_id": s.meta.player_id, "seed": s.seed })).collect::<Vec<_>>(),
    });
    write_atomic(&out.join("manifest.json"), pretty_json(&manifest).as_bytes())?;
    info!("wrote {} sessions to {}", slots.len(), out.display());
    Ok(())
}
