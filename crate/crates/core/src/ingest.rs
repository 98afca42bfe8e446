//! Line-oriented parsers and writers for the four capture formats, plus
//! session-directory loading.
//!
//! Every format is UTF-8, one record per line, with `#` comment lines and
//! blank lines ignored. CSV files need a header line. Floats are written with
//! Rust's shortest round-trip formatting, so `parse(write(x)) == x` holds
//! bit-for-bit and re-serializing a parsed file reproduces it byte for byte.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_session, BeatSeries, EventKind, GameEvent, GazeSample, GazeSeries, InputSample, Key, KeySet,
    MatchTimeline, PlayerMeta, Round, Screen, Session, Violation, MIN_BEAT_INTERVAL_S,
};

pub const GAZE_FILE: &str = "gaze.csv";
pub const INPUT_FILE: &str = "input.csv";
pub const HRM_FILE: &str = "hrm.txt";
pub const DEMO_FILE: &str = "demo.events";
pub const META_FILE: &str = "meta.json";

const GAZE_HEADER: &str = "t,x,y";
const INPUT_HEADER: &str = "t,mouse_x,mouse_y,keys";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Gaze,
    Input,
    Hrm,
    Demo,
}

impl FileKind {
    pub fn file_name(self) -> &'static str {
        match self {
            FileKind::Gaze => GAZE_FILE,
            FileKind::Input => INPUT_FILE,
            FileKind::Hrm => HRM_FILE,
            FileKind::Demo => DEMO_FILE,
        }
    }
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}:{line}: {message} (byte offset {offset})")]
pub struct ParseError {
    pub kind: FileKind,
    /// 1-based line number of the offending row.
    pub line: usize,
    /// Byte offset of the start of that line.
    pub offset: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("session failed validation: {}", summarize(.violations))]
pub struct AssemblyError {
    pub violations: Vec<Violation>,
}

fn summarize(violations: &[Violation]) -> String {
    let mut s = violations
        .iter()
        .take(3)
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ");
    if violations.len() > 3 {
        s.push_str(&format!(" (+{} more)", violations.len() - 3));
    }
    s
}

/// A single logical line handed to a row parser.
struct Line<'a> {
    number: usize,
    offset: u64,
    text: &'a str,
}

/// Streams non-comment lines from `reader`, one at a time.
fn for_each_line<R, F>(kind: FileKind, mut reader: R, mut f: F) -> Result<(), ParseError>
where
    R: BufRead,
    F: FnMut(Line<'_>) -> Result<(), String>,
{
    let mut buf = String::new();
    let mut number = 0usize;
    let mut offset = 0u64;
    loop {
        buf.clear();
        let read = reader.read_line(&mut buf).map_err(|e| ParseError {
            kind,
            line: number + 1,
            offset,
            message: e.to_string(),
        })?;
        if read == 0 {
            return Ok(());
        }
        number += 1;
        let text = buf.trim_end_matches(['\n', '\r']);
        if !(text.trim().is_empty() || text.trim_start().starts_with('#')) {
            f(Line { number, offset, text }).map_err(|message| ParseError {
                kind,
                line: number,
                offset,
                message,
            })?;
        }
        offset += read as u64;
    }
}

fn parse_time(field: &str) -> Result<f64, String> {
    let t: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("malformed timestamp `{field}`"))?;
    if !t.is_finite() || t < 0.0 {
        return Err(format!("timestamp `{field}` must be finite and non-negative"));
    }
    Ok(t)
}

fn parse_number(field: &str, what: &str) -> Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("malformed {what} `{field}`"))?;
    if !v.is_finite() {
        return Err(format!("{what} `{field}` is not finite"));
    }
    Ok(v)
}

fn split_columns(text: &str, expected: usize) -> Result<Vec<&str>, String> {
    let cols: Vec<&str> = text.split(',').collect();
    if cols.len() != expected {
        return Err(format!("expected {expected} columns, found {}", cols.len()));
    }
    Ok(cols)
}

fn expect_header(line: &Line<'_>, header: &str) -> Result<(), String> {
    if line.text.trim() != header {
        return Err(format!("expected header `{header}`, found `{}`", line.text));
    }
    Ok(())
}

fn check_increasing(prev: Option<f64>, t: f64) -> Result<(), String> {
    match prev {
        Some(p) if t == p => Err(format!("duplicate timestamp {t}")),
        Some(p) if t < p => Err(format!("timestamp {t} precedes previous {p}")),
        _ => Ok(()),
    }
}

/// Parses `gaze.csv`. Rows with an empty coordinate, or with a point off the
/// screen, become `valid = false` samples at the row's timestamp.
pub fn parse_gaze_log<R: BufRead>(
    reader: R,
    player: PlayerMeta,
    screen: Screen,
    rate_hz: f64,
) -> Result<GazeSeries, ParseError> {
    let mut samples: Vec<GazeSample> = Vec::new();
    let mut header_seen = false;
    for_each_line(FileKind::Gaze, reader, |line| {
        if !header_seen {
            header_seen = true;
            return expect_header(&line, GAZE_HEADER);
        }
        let cols = split_columns(line.text, 3)?;
        let t = parse_time(cols[0])?;
        check_increasing(samples.last().map(|s| s.t), t)?;
        let (xs, ys) = (cols[1].trim(), cols[2].trim());
        let sample = if xs.is_empty() || ys.is_empty() {
            GazeSample::missing(t)
        } else {
            let x = parse_number(xs, "x coordinate")?;
            let y = parse_number(ys, "y coordinate")?;
            if screen.contains(x, y) {
                GazeSample::valid(t, x, y)
            } else {
                GazeSample::missing(t)
            }
        };
        samples.push(sample);
        Ok(())
    })?;
    Ok(GazeSeries {
        player,
        samples,
        nominal_rate_hz: rate_hz,
        screen,
    })
}

pub fn parse_key_set(field: &str) -> Result<KeySet, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(KeySet::EMPTY);
    }
    field
        .split('+')
        .map(|tok| tok.trim().parse::<Key>().map_err(|e| e.to_string()))
        .collect()
}

/// Parses `input.csv` into sampled key-state snapshots.
pub fn parse_input_log<R: BufRead>(reader: R) -> Result<Vec<InputSample>, ParseError> {
    let mut samples: Vec<InputSample> = Vec::new();
    let mut header_seen = false;
    for_each_line(FileKind::Input, reader, |line| {
        if !header_seen {
            header_seen = true;
            return expect_header(&line, INPUT_HEADER);
        }
        let cols = split_columns(line.text, 4)?;
        let t = parse_time(cols[0])?;
        check_increasing(samples.last().map(|s| s.t), t)?;
        samples.push(InputSample {
            t,
            mouse_x: parse_number(cols[1], "mouse_x")?,
            mouse_y: parse_number(cols[2], "mouse_y")?,
            keys_down: parse_key_set(cols[3])?,
        });
        Ok(())
    })?;
    Ok(samples)
}

/// Parses `hrm.txt`, one beat time per line.
pub fn parse_hrm_log<R: BufRead>(reader: R, player: PlayerMeta) -> Result<BeatSeries, ParseError> {
    let mut beat_times: Vec<f64> = Vec::new();
    for_each_line(FileKind::Hrm, reader, |line| {
        let t = parse_time(line.text)?;
        if let Some(&prev) = beat_times.last() {
            check_increasing(Some(prev), t)?;
            if t - prev <= MIN_BEAT_INTERVAL_S {
                return Err(format!(
                    "beat interval {}s implies a pulse of 240 bpm or more",
                    t - prev
                ));
            }
        }
        beat_times.push(t);
        Ok(())
    })?;
    Ok(BeatSeries { player, beat_times })
}

fn parse_event_kind(token: &str) -> Option<EventKind> {
    Some(match token {
        "spawn" => EventKind::Spawn,
        "death" => EventKind::Death,
        "kill" => EventKind::Kill,
        "weapon_fire" => EventKind::WeaponFire,
        _ => return None,
    })
}

/// Parses a `demo.events` export into a validated timeline.
///
/// Events are returned in time order (stable for equal times). Players are
/// resolved against the roster of spawned players.
pub fn parse_demo_events<R: BufRead>(reader: R) -> Result<MatchTimeline, ParseError> {
    let mut rounds: Vec<Round> = Vec::new();
    let mut open: Option<(u32, f64)> = None;
    let mut events: Vec<(usize, u64, GameEvent)> = Vec::new();
    let mut last_line = (0usize, 0u64);

    for_each_line(FileKind::Demo, reader, |line| {
        last_line = (line.number, line.offset);
        let toks: Vec<&str> = line.text.split_whitespace().collect();
        let arity = |n: usize| -> Result<(), String> {
            if toks.len() != n {
                Err(format!(
                    "`{}` expects {} fields, found {}",
                    toks[0],
                    n - 1,
                    toks.len() - 1
                ))
            } else {
                Ok(())
            }
        };
        match toks[0] {
            "round_start" | "round_end" => {
                arity(3)?;
                let t = parse_time(toks[1])?;
                let index: u32 = toks[2]
                    .parse()
                    .map_err(|_| format!("malformed round index `{}`", toks[2]))?;
                if toks[0] == "round_start" {
                    if let Some((open_idx, _)) = open {
                        return Err(format!("round {index} starts while round {open_idx} is open"));
                    }
                    if let Some(prev) = rounds.last() {
                        if t < prev.end_t {
                            return Err(format!(
                                "round {index} starting at {t} overlaps round {} ending at {}",
                                prev.index, prev.end_t
                            ));
                        }
                    }
                    open = Some((index, t));
                } else {
                    let (open_idx, start_t) = open
                        .take()
                        .ok_or_else(|| format!("round_end {index} without round_start"))?;
                    if open_idx != index {
                        return Err(format!("round_end {index} does not match open round {open_idx}"));
                    }
                    if !(t > start_t) {
                        return Err(format!("round {index} ends at {t}, not after its start {start_t}"));
                    }
                    rounds.push(Round {
                        index,
                        start_t,
                        end_t: t,
                    });
                }
            }
            kind_tok => {
                let kind = parse_event_kind(kind_tok).ok_or_else(|| format!("unknown event kind `{kind_tok}`"))?;
                let object = if kind == EventKind::Kill {
                    arity(4)?;
                    Some(toks[3].to_string())
                } else {
                    arity(3)?;
                    None
                };
                let event = GameEvent {
                    t: parse_time(toks[1])?,
                    kind,
                    subject: toks[2].to_string(),
                    object,
                };
                events.push((line.number, line.offset, event));
            }
        }
        Ok(())
    })?;

    let fail = |(line, offset): (usize, u64), message: String| ParseError {
        kind: FileKind::Demo,
        line: line.max(1),
        offset,
        message,
    };
    if let Some((index, _)) = open {
        return Err(fail(last_line, format!("round {index} is never closed")));
    }

    let mut timeline = MatchTimeline {
        rounds,
        events: Vec::new(),
    };
    let roster: HashSet<&str> = events
        .iter()
        .filter(|(_, _, e)| e.kind == EventKind::Spawn)
        .map(|(_, _, e)| e.subject.as_str())
        .collect();
    for (line, offset, e) in &events {
        if timeline.round_at(e.t).is_none() {
            return Err(fail(
                (*line, *offset),
                format!("{} at t={} lies outside every round", e.kind.token(), e.t),
            ));
        }
        for p in std::iter::once(&e.subject).chain(e.object.as_ref()) {
            if !roster.contains(p.as_str()) {
                return Err(fail((*line, *offset), format!("player `{p}` never spawns")));
            }
        }
    }
    let mut ordered: Vec<GameEvent> = events.into_iter().map(|(_, _, e)| e).collect();
    ordered.sort_by(|a, b| a.t.total_cmp(&b.t));
    timeline.events = ordered;
    Ok(timeline)
}

pub fn write_gaze_log<W: Write>(series: &GazeSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "{GAZE_HEADER}")?;
    for s in &series.samples {
        if s.valid {
            writeln!(w, "{},{},{}", s.t, s.x, s.y)?;
        } else {
            writeln!(w, "{},,", s.t)?;
        }
    }
    Ok(())
}

pub fn write_input_log<W: Write>(samples: &[InputSample], mut w: W) -> io::Result<()> {
    writeln!(w, "{INPUT_HEADER}")?;
    for s in samples {
        writeln!(w, "{},{},{},{}", s.t, s.mouse_x, s.mouse_y, s.keys_down)?;
    }
    Ok(())
}

pub fn write_hrm_log<W: Write>(beats: &BeatSeries, mut w: W) -> io::Result<()> {
    for t in &beats.beat_times {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

/// Writes rounds in order, each followed by the events that belong to it.
pub fn write_demo_events<W: Write>(timeline: &MatchTimeline, mut w: W) -> io::Result<()> {
    let mut by_round: Vec<Vec<&GameEvent>> = vec![Vec::new(); timeline.rounds.len()];
    for e in &timeline.events {
        if let Some(i) = timeline.round_at(e.t) {
            by_round[i].push(e);
        }
    }
    for (round, events) in timeline.rounds.iter().zip(by_round) {
        writeln!(w, "round_start {} {}", round.start_t, round.index)?;
        for e in events {
            write!(w, "{} {} {}", e.kind.token(), e.t, e.subject)?;
            if let Some(o) = &e.object {
                write!(w, " {o}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "round_end {} {}", round.end_t, round.index)?;
    }
    Ok(())
}

/// Combines parsed streams into a [`Session`], rejecting it if any invariant
/// fails.
pub fn assemble_session(
    meta: PlayerMeta,
    gaze: GazeSeries,
    input: Vec<InputSample>,
    input_period_s: f64,
    hrm: Option<BeatSeries>,
    timeline: MatchTimeline,
) -> Result<Session, AssemblyError> {
    let session = Session {
        meta,
        gaze,
        input,
        input_period_s,
        hrm,
        timeline,
    };
    let violations = validate_session(&session);
    if violations.is_empty() {
        Ok(session)
    } else {
        Err(AssemblyError { violations })
    }
}

/// Per-session facts that none of the capture files record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub player: PlayerMeta,
    pub gaze_rate_hz: f64,
    pub screen: Screen,
    pub input_period_s: f64,
}

impl SessionMeta {
    pub fn of(session: &Session) -> Self {
        SessionMeta {
            player: session.meta.clone(),
            gaze_rate_hz: session.gaze.nominal_rate_hz,
            screen: session.gaze.screen,
            input_period_s: session.input_period_s,
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", dir.display())]
    Parse {
        dir: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("missing required file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", dir.display())]
    Assembly {
        dir: PathBuf,
        #[source]
        source: AssemblyError,
    },
}

fn open(path: &Path) -> Result<BufReader<File>, LoadError> {
    if !path.exists() {
        return Err(LoadError::MissingFile(path.to_path_buf()));
    }
    File::open(path).map(BufReader::new).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and assembles a session directory. `hrm.txt` is optional.
pub fn load_session_dir(dir: &Path) -> Result<Session, LoadError> {
    let meta_path = dir.join(META_FILE);
    let meta: SessionMeta = serde_json::from_reader(open(&meta_path)?).map_err(|source| LoadError::Meta {
        path: meta_path.clone(),
        source,
    })?;
    let parse_err = |source| LoadError::Parse {
        dir: dir.to_path_buf(),
        source,
    };
    let gaze = parse_gaze_log(
        open(&dir.join(GAZE_FILE))?,
        meta.player.clone(),
        meta.screen,
        meta.gaze_rate_hz,
    )
    .map_err(parse_err)?;
    let input = parse_input_log(open(&dir.join(INPUT_FILE))?).map_err(parse_err)?;
    let timeline = parse_demo_events(open(&dir.join(DEMO_FILE))?).map_err(parse_err)?;
    let hrm_path = dir.join(HRM_FILE);
    let hrm = if hrm_path.exists() {
        Some(parse_hrm_log(open(&hrm_path)?, meta.player.clone()).map_err(parse_err)?)
    } else {
        None
    };
    assemble_session(meta.player, gaze, input, meta.input_period_s, hrm, timeline).map_err(|source| {
        LoadError::Assembly {
            dir: dir.to_path_buf(),
            source,
        }
    })
}

/// In-memory rendering of every file in a session directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionFiles {
    pub meta: String,
    pub gaze: String,
    pub input: String,
    pub hrm: Option<String>,
    pub demo: String,
}

fn render<F: FnOnce(&mut Vec<u8>) -> io::Result<()>>(f: F) -> String {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("writers emit UTF-8")
}

impl SessionFiles {
    pub fn render(session: &Session) -> Self {
        let mut meta = serde_json::to_string_pretty(&SessionMeta::of(session)).expect("session meta serializes");
        meta.push('\n');
        SessionFiles {
            meta,
            gaze: render(|b| write_gaze_log(&session.gaze, b)),
            input: render(|b| write_input_log(&session.input, b)),
            hrm: session.hrm.as_ref().map(|h| render(|b| write_hrm_log(h, b))),
            demo: render(|b| write_demo_events(&session.timeline, b)),
        }
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(META_FILE), &self.meta)?;
        fs::write(dir.join(GAZE_FILE), &self.gaze)?;
        fs::write(dir.join(INPUT_FILE), &self.input)?;
        if let Some(hrm) = &self.hrm {
            fs::write(dir.join(HRM_FILE), hrm)?;
        }
        fs::write(dir.join(DEMO_FILE), &self.demo)?;
        Ok(())
    }
}
