//! Domain types shared by every pipeline stage.
//!
//! All timestamps are session-relative seconds. Values are immutable once
//! built; the ingest layer is the only place that constructs them from files.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default capture screen, in pixels.
pub const DEFAULT_SCREEN: Screen = Screen {
    width: 1920,
    height: 1080,
};

/// Default input logger cadence in seconds.
pub const DEFAULT_INPUT_PERIOD_S: f64 = 0.01;

/// Shortest admissible inter-beat interval. A pulse is always below 240 bpm.
pub const MIN_BEAT_INTERVAL_S: f64 = 0.25;

/// Slack allowed between the last round end and the last sensor sample.
pub const CLOCK_TOLERANCE_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Professional,
    Amateur,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Professional => "professional",
            Cohort::Amateur => "amateur",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlayerMeta {
    pub player_id: String,
    pub cohort: Cohort,
    /// 1-based player index within a dataset.
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Screen {
    pub width: u32,
    pub height: u32,
}

impl Screen {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width as f64).contains(&x) && (0.0..=self.height as f64).contains(&y)
    }
}

impl Default for Screen {
    fn default() -> Self {
        DEFAULT_SCREEN
    }
}

/// Half-open time span `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    /// Returns `None` unless `end > start`.
    pub fn new(start: f64, end: f64) -> Option<Self> {
        (end > start).then_some(Interval { start, end })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    /// Length of the overlap with `[start, end)`.
    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        (self.end.min(end) - self.start.max(start)).max(0.0)
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        Interval::new(self.start.max(other.start), self.end.min(other.end))
    }
}

/// Anything carrying a session-relative timestamp.
pub trait Timestamped {
    fn t(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

impl GazeSample {
    pub fn valid(t: f64, x: f64, y: f64) -> Self {
        GazeSample { t, x, y, valid: true }
    }

    pub fn missing(t: f64) -> Self {
        GazeSample {
            t,
            x: 0.0,
            y: 0.0,
            valid: false,
        }
    }

    pub fn point(&self) -> Option<(f64, f64)> {
        self.valid.then_some((self.x, self.y))
    }
}

impl Timestamped for GazeSample {
    fn t(&self) -> f64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeSeries {
    pub player: PlayerMeta,
    pub samples: Vec<GazeSample>,
    pub nominal_rate_hz: f64,
    pub screen: Screen,
}

impl GazeSeries {
    /// Number of samples, `t_n` for this player.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Keys the input logger knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    W,
    A,
    S,
    D,
    Mouse1,
    Mouse2,
    Space,
    Ctrl,
    Shift,
    R,
    E,
    Q,
    Num1,
    Num2,
    Num3,
    Num4,
    Num5,
}

impl Key {
    /// Declared alphabet in canonical serialization order.
    pub const ALL: [Key; 17] = [
        Key::W,
        Key::A,
        Key::S,
        Key::D,
        Key::Mouse1,
        Key::Mouse2,
        Key::Space,
        Key::Ctrl,
        Key::Shift,
        Key::R,
        Key::E,
        Key::Q,
        Key::Num1,
        Key::Num2,
        Key::Num3,
        Key::Num4,
        Key::Num5,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Key::W => "W",
            Key::A => "A",
            Key::S => "S",
            Key::D => "D",
            Key::Mouse1 => "MOUSE1",
            Key::Mouse2 => "MOUSE2",
            Key::Space => "SPACE",
            Key::Ctrl => "CTRL",
            Key::Shift => "SHIFT",
            Key::R => "R",
            Key::E => "E",
            Key::Q => "Q",
            Key::Num1 => "1",
            Key::Num2 => "2",
            Key::Num3 => "3",
            Key::Num4 => "4",
            Key::Num5 => "5",
        }
    }

    fn bit(self) -> u32 {
        1 << (self as u32)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown key token `{0}`")]
pub struct UnknownKey(pub String);

impl FromStr for Key {
    type Err = UnknownKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Key::ALL
            .iter()
            .copied()
            .find(|k| k.token() == s)
            .ok_or_else(|| UnknownKey(s.to_string()))
    }
}

/// Set of held keys, stored as a bitmask over [`Key::ALL`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct KeySet(u32);

impl KeySet {
    pub const EMPTY: KeySet = KeySet(0);

    pub fn of(keys: &[Key]) -> Self {
        keys.iter().fold(KeySet::EMPTY, |s, &k| s.with(k))
    }

    pub fn with(self, key: Key) -> Self {
        KeySet(self.0 | key.bit())
    }

    pub fn insert(&mut self, key: Key) {
        self.0 |= key.bit();
    }

    pub fn contains(self, key: Key) -> bool {
        self.0 & key.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersects(self, other: KeySet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset_of(self, other: KeySet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Key> {
        Key::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl FromIterator<Key> for KeySet {
    fn from_iter<I: IntoIterator<Item = Key>>(iter: I) -> Self {
        iter.into_iter().fold(KeySet::EMPTY, KeySet::with)
    }
}

impl fmt::Display for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, key) in self.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            f.write_str(key.token())?;
        }
        Ok(())
    }
}

/// One snapshot of the input logger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSample {
    pub t: f64,
    pub mouse_x: f64,
    pub mouse_y: f64,
    pub keys_down: KeySet,
}

impl Timestamped for InputSample {
    fn t(&self) -> f64 {
        self.t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatSeries {
    pub player: PlayerMeta,
    pub beat_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    pub start_t: f64,
    pub end_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Spawn,
    Death,
    Kill,
    WeaponFire,
}

impl EventKind {
    pub fn token(self) -> &'static str {
        match self {
            EventKind::Spawn => "spawn",
            EventKind::Death => "death",
            EventKind::Kill => "kill",
            EventKind::WeaponFire => "weapon_fire",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameEvent {
    pub t: f64,
    pub kind: EventKind,
    pub subject: String,
    /// Victim of a kill; absent for every other kind.
    pub object: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchTimeline {
    pub rounds: Vec<Round>,
    /// Events in time order.
    pub events: Vec<GameEvent>,
}

impl MatchTimeline {
    /// Position of the round an event at `t` belongs to: the last round that
    /// has started by `t`, provided `t` does not exceed its end. An instant
    /// shared by two back-to-back rounds belongs to the later one.
    pub fn round_at(&self, t: f64) -> Option<usize> {
        let pos = self.rounds.partition_point(|r| r.start_t <= t);
        let idx = pos.checked_sub(1)?;
        (t <= self.rounds[idx].end_t).then_some(idx)
    }

    pub fn players(&self) -> HashSet<&str> {
        let mut out = HashSet::new();
        for e in &self.events {
            out.insert(e.subject.as_str());
            if let Some(o) = &e.object {
                out.insert(o.as_str());
            }
        }
        out
    }

    pub fn end_t(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.end_t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub meta: PlayerMeta,
    pub gaze: GazeSeries,
    pub input: Vec<InputSample>,
    /// Nominal cadence of the input logger.
    pub input_period_s: f64,
    pub hrm: Option<BeatSeries>,
    pub timeline: MatchTimeline,
}

/// Which sensor stream a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Gaze,
    Input,
    Hrm,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Gaze => "gaze",
            Stream::Input => "input",
            Stream::Hrm => "hrm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("player id is empty")]
    EmptyPlayerId,
    #[error("{stream} series belongs to `{found}`, session player is `{expected}`")]
    PlayerMismatch {
        stream: Stream,
        expected: String,
        found: String,
    },
    #[error("nominal rate {0} must be positive")]
    NonPositiveRate(f64),
    #[error("input period {0} must be positive")]
    NonPositivePeriod(f64),
    #[error("{stream} sample {index}: timestamp {t} is negative or not finite")]
    BadTimestamp { stream: Stream, index: usize, t: f64 },
    #[error("{stream} sample {index}: timestamp does not increase")]
    NotIncreasing { stream: Stream, index: usize },
    #[error("gaze sample {index}: valid point ({x}, {y}) is off screen")]
    OffScreen { index: usize, x: f64, y: f64 },
    #[error("beat {index}: interval {interval}s is not above {MIN_BEAT_INTERVAL_S}s")]
    BeatTooClose { index: usize, interval: f64 },
    #[error("{stream} sample {index} at t={t} lies beyond the last round end {end}")]
    BeyondTimeline {
        stream: Stream,
        index: usize,
        t: f64,
        end: f64,
    },
    #[error("timeline has no rounds")]
    NoRounds,
    #[error("round {index}: end {end_t} is not after start {start_t}")]
    EmptyRound { index: u32, start_t: f64, end_t: f64 },
    #[error("round {index} overlaps or precedes the previous round")]
    RoundOverlap { index: u32 },
    #[error("event {index} at t={t} lies outside every round")]
    EventOutsideRounds { index: usize, t: f64 },
    #[error("event {index} is out of time order")]
    EventOrder { index: usize },
    #[error("player `{0}` never appears in the timeline")]
    UnresolvedPlayer(String),
}

/// Collects every invariant violation in `session`. An empty list means valid.
pub fn validate_session(session: &Session) -> Vec<Violation> {
    let mut out = Vec::new();
    let meta = &session.meta;
    if meta.player_id.is_empty() {
        out.push(Violation::EmptyPlayerId);
    }
    if session.gaze.player.player_id != meta.player_id {
        out.push(Violation::PlayerMismatch {
            stream: Stream::Gaze,
            expected: meta.player_id.clone(),
            found: session.gaze.player.player_id.clone(),
        });
    }
    if let Some(hrm) = &session.hrm {
        if hrm.player.player_id != meta.player_id {
            out.push(Violation::PlayerMismatch {
                stream: Stream::Hrm,
                expected: meta.player_id.clone(),
                found: hrm.player.player_id.clone(),
            });
        }
    }
    if !(session.gaze.nominal_rate_hz > 0.0) {
        out.push(Violation::NonPositiveRate(session.gaze.nominal_rate_hz));
    }
    if !(session.input_period_s > 0.0) {
        out.push(Violation::NonPositivePeriod(session.input_period_s));
    }

    let end = validate_timeline(&session.timeline, &mut out);
    if !meta.player_id.is_empty() && !session.timeline.players().contains(meta.player_id.as_str()) {
        out.push(Violation::UnresolvedPlayer(meta.player_id.clone()));
    }
    let limit = end.map(|e| e + CLOCK_TOLERANCE_S);

    let gaze_t: Vec<f64> = session.gaze.samples.iter().map(|s| s.t).collect();
    check_times(Stream::Gaze, &gaze_t, limit, &mut out);
    let screen = session.gaze.screen;
    for (index, s) in session.gaze.samples.iter().enumerate() {
        if s.valid && !screen.contains(s.x, s.y) {
            out.push(Violation::OffScreen { index, x: s.x, y: s.y });
        }
    }

    let input_t: Vec<f64> = session.input.iter().map(|s| s.t).collect();
    check_times(Stream::Input, &input_t, limit, &mut out);

    if let Some(hrm) = &session.hrm {
        check_times(Stream::Hrm, &hrm.beat_times, limit, &mut out);
        for (i, w) in hrm.beat_times.windows(2).enumerate() {
            let interval = w[1] - w[0];
            if interval > 0.0 && interval <= MIN_BEAT_INTERVAL_S {
                out.push(Violation::BeatTooClose { index: i + 1, interval });
            }
        }
    }
    out
}

fn check_times(stream: Stream, times: &[f64], limit: Option<f64>, out: &mut Vec<Violation>) {
    for (index, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            out.push(Violation::BadTimestamp { stream, index, t });
        }
        if index > 0 && !(t > times[index - 1]) {
            out.push(Violation::NotIncreasing { stream, index });
        }
    }
    if let (Some(end), Some((index, &t))) = (limit, times.iter().enumerate().next_back()) {
        if t > end {
            out.push(Violation::BeyondTimeline {
                stream,
                index,
                t,
                end: end - CLOCK_TOLERANCE_S,
            });
        }
    }
}

/// Checks round and event structure, returning the timeline end if any.
fn validate_timeline(timeline: &MatchTimeline, out: &mut Vec<Violation>) -> Option<f64> {
    if timeline.rounds.is_empty() {
        out.push(Violation::NoRounds);
    }
    let mut prev_end = f64::NEG_INFINITY;
    for r in &timeline.rounds {
        if !(r.end_t > r.start_t) {
            out.push(Violation::EmptyRound {
                index: r.index,
                start_t: r.start_t,
                end_t: r.end_t,
            });
        }
        if r.start_t < prev_end {
            out.push(Violation::RoundOverlap { index: r.index });
        }
        prev_end = r.end_t;
    }
    for (index, e) in timeline.events.iter().enumerate() {
        if timeline.round_at(e.t).is_none() {
            out.push(Violation::EventOutsideRounds { index, t: e.t });
        }
        if index > 0 && e.t < timeline.events[index - 1].t {
            out.push(Violation::EventOrder { index });
        }
    }
    timeline.end_t()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn meta() -> PlayerMeta {
        PlayerMeta {
            player_id: "p1".into(),
            cohort: Cohort::Professional,
            index: 1,
        }
    }

    pub fn event(t: f64, kind: EventKind, subject: &str) -> GameEvent {
        GameEvent {
            t,
            kind,
            subject: subject.into(),
            object: None,
        }
    }

    /// One 40 s round, player p1 spawns at 0 and dies at 25; gaze at 10 Hz.
    pub fn session() -> Session {
        let gaze = GazeSeries {
            player: meta(),
            samples: (0..400)
                .map(|i| GazeSample::valid(i as f64 / 10.0, 960.0, 540.0))
                .collect(),
            nominal_rate_hz: 10.0,
            screen: DEFAULT_SCREEN,
        };
        let input = (0..40)
            .map(|i| InputSample {
                t: i as f64,
                mouse_x: 100.0,
                mouse_y: 100.0,
                keys_down: KeySet::EMPTY,
            })
            .collect();
        Session {
            meta: meta(),
            gaze,
            input,
            input_period_s: 1.0,
            hrm: None,
            timeline: MatchTimeline {
                rounds: vec![Round {
                    index: 1,
                    start_t: 0.0,
                    end_t: 40.0,
                }],
                events: vec![event(0.0, EventKind::Spawn, "p1"), event(25.0, EventKind::Death, "p1")],
            },
        }
    }
}
