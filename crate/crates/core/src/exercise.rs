//! Exercise definitions and their expansion into absolute timelines.
//!
//! Beats are exact rationals in quarter-note units; conversion to
//! milliseconds happens only in [`expand`].

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi::PadId;

/// Exact position in quarter notes.
pub type Beat = Ratio<i64>;

/// Frets on the board exercises are validated against unless told otherwise.
pub const DEFAULT_FRET_COUNT: u8 = 22;

pub const DEFAULT_VELOCITY_RANGE: VelocityRange = VelocityRange { lo: 64, hi: 112 };

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExerciseError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid exercise{}: {message}", note_index.map(|i| format!(" (note {i})")).unwrap_or_default())]
    Validation {
        note_index: Option<usize>,
        message: String,
    },
}

impl ExerciseError {
    fn at(note_index: usize, message: impl Into<String>) -> Self {
        Self::Validation {
            note_index: Some(note_index),
            message: message.into(),
        }
    }

    fn whole(message: impl Into<String>) -> Self {
        Self::Validation {
            note_index: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Drums,
    Guitar,
}

/// A (string, fret) position. String 1 is the high E (thinnest) string;
/// fret 0 is the open string at the nut.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub string: u8,
    pub fret: u8,
}

impl Cell {
    pub const fn new(string: u8, fret: u8) -> Self {
        Self { string, fret }
    }
}

/// What a note is played on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum TargetSpec {
    Pad { pad: PadId },
    FretCell {
        string: u8,
        fret: u8,
    },
}

impl TargetSpec {
    pub fn pad(pad: PadId) -> Self {
        TargetSpec::Pad { pad }
    }

    pub fn cell(string: u8, fret: u8) -> Self {
        TargetSpec::FretCell { string, fret }
    }

    pub fn as_cell(&self) -> Option<Cell> {
        match *self {
            TargetSpec::FretCell { string, fret } => Some(Cell { string, fret }),
            TargetSpec::Pad { .. } => None,
        }
    }

    pub fn as_pad(&self) -> Option<PadId> {
        match *self {
            TargetSpec::Pad { pad } => Some(pad),
            TargetSpec::FretCell { .. } => None,
        }
    }

    pub fn instrument(&self) -> Instrument {
        match self {
            TargetSpec::Pad { .. } => Instrument::Drums,
            TargetSpec::FretCell { .. } => Instrument::Guitar,
        }
    }
}

impl From<Cell> for TargetSpec {
    fn from(c: Cell) -> Self {
        TargetSpec::cell(c.string, c.fret)
    }
}

impl From<PadId> for TargetSpec {
    fn from(p: PadId) -> Self {
        TargetSpec::pad(p)
    }
}

/// Inclusive acceptable velocity band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u8; 2]", into = "[u8; 2]")]
pub struct VelocityRange {
    pub lo: u8,
    pub hi: u8,
}

impl From<[u8; 2]> for VelocityRange {
    fn from([lo, hi]: [u8; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<VelocityRange> for [u8; 2] {
    fn from(r: VelocityRange) -> Self {
        [r.lo, r.hi]
    }
}

impl VelocityRange {
    /// Signed distance of `velocity` outside the band; zero inside it.
    pub fn deviation(&self, velocity: u8) -> i32 {
        let v = i32::from(velocity);
        if v < i32::from(self.lo) {
            v - i32::from(self.lo)
        } else if v > i32::from(self.hi) {
            v - i32::from(self.hi)
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedNote {
    pub beat: Beat,
    pub target: TargetSpec,
    pub velocity_range: VelocityRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exercise {
    pub id: String,
    pub title: String,
    pub instrument: Instrument,
    pub tempo_bpm: f64,
    pub bar_beats: Option<Beat>,
    pub notes: Vec<ExpectedNote>,
    pub loops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub time_ms: f64,
    pub note_index: usize,
    pub loop_index: u32,
    pub target: TargetSpec,
    pub velocity_range: VelocityRange,
}

/// Expected notes in absolute time, sorted by `time_ms`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTimeline {
    pub entries: Vec<TimelineEntry>,
}

impl ExpectedTimeline {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Instrument of the first entry, if any.
    pub fn instrument(&self) -> Option<Instrument> {
        self.entries.first().map(|e| e.target.instrument())
    }
}

// ---- file format ----

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum BeatRepr {
    Whole(i64),
    Fraction([i64; 2]),
}

impl BeatRepr {
    fn to_beat(self) -> Option<Beat> {
        match self {
            BeatRepr::Whole(n) => Some(Beat::from_integer(n)),
            BeatRepr::Fraction([_, 0]) => None,
            BeatRepr::Fraction([n, d]) => Some(Beat::new(n, d)),
        }
    }

    fn from_beat(b: Beat) -> Self {
        BeatRepr::Fraction([*b.numer(), *b.denom()])
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteDoc {
    beat: BeatRepr,
    target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocity: Option<[u8; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExerciseDoc {
    id: String,
    title: String,
    instrument: Instrument,
    tempo_bpm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bar_beats: Option<BeatRepr>,
    loops: u32,
    notes: Vec<NoteDoc>,
}

/// Parses and validates an exercise against a default 22-fret board.
pub fn load_exercise(document: &str) -> Result<Exercise, ExerciseError> {
    load_exercise_with(document, DEFAULT_FRET_COUNT)
}

/// Parses and validates an exercise for a board with `fret_count` frets.
pub fn load_exercise_with(document: &str, fret_count: u8) -> Result<Exercise, ExerciseError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: ExerciseDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        ExerciseError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        }
    })?;

    let mut notes = Vec::with_capacity(doc.notes.len());
    for (i, n) in doc.notes.into_iter().enumerate() {
        let beat = n
            .beat
            .to_beat()
            .ok_or_else(|| ExerciseError::at(i, "beat denominator is zero"))?;
        notes.push(ExpectedNote {
            beat,
            target: n.target,
            velocity_range: n.velocity.map_or(DEFAULT_VELOCITY_RANGE, VelocityRange::from),
        });
    }
    let bar_beats = match doc.bar_beats {
        Some(b) => Some(
            b.to_beat()
                .ok_or_else(|| ExerciseError::whole("bar_beats denominator is zero"))?,
        ),
        None => None,
    };
    let exercise = Exercise {
        id: doc.id,
        title: doc.title,
        instrument: doc.instrument,
        tempo_bpm: doc.tempo_bpm,
        bar_beats,
        notes,
        loops: doc.loops,
    };
    exercise.validate(fret_count)?;
    Ok(exercise)
}

/// Serializes an exercise in the file format accepted by [`load_exercise`].
pub fn exercise_to_json(exercise: &Exercise) -> String {
    let doc = ExerciseDoc {
        id: exercise.id.clone(),
        title: exercise.title.clone(),
        instrument: exercise.instrument,
        tempo_bpm: exercise.tempo_bpm,
        bar_beats: exercise.bar_beats.map(BeatRepr::from_beat),
        loops: exercise.loops,
        notes: exercise
            .notes
            .iter()
            .map(|n| NoteDoc {
                beat: BeatRepr::from_beat(n.beat),
                target: n.target,
                velocity: Some(n.velocity_range.into()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("exercise serializes")
}

impl Exercise {
    pub fn validate(&self, fret_count: u8) -> Result<(), ExerciseError> {
        if self.notes.is_empty() {
            return Err(ExerciseError::whole("exercise has no notes"));
        }
        if self.loops < 1 {
            return Err(ExerciseError::whole("loops must be at least 1"));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(ExerciseError::whole("tempo_bpm must be positive"));
        }
        for (i, n) in self.notes.iter().enumerate() {
            if n.beat < Beat::zero() {
                return Err(ExerciseError::at(i, "beat is negative"));
            }
            let VelocityRange { lo, hi } = n.velocity_range;
            if !(1..=127).contains(&lo) || !(1..=127).contains(&hi) {
                return Err(ExerciseError::at(i, "velocity bounds must lie in 1..=127"));
            }
            if lo > hi {
                return Err(ExerciseError::at(i, format!("velocity range [{lo}, {hi}] is inverted")));
            }
            if n.target.instrument() != self.instrument {
                return Err(ExerciseError::at(i, "target does not match the instrument"));
            }
            if let TargetSpec::FretCell { string, fret } = n.target {
                if !(1..=6).contains(&string) {
                    return Err(ExerciseError::at(i, format!("string {string} outside 1..=6")));
                }
                if fret > fret_count {
                    return Err(ExerciseError::at(
                        i,
                        format!("fret {fret} beyond the board's {fret_count} frets"),
                    ));
                }
            }
            if i > 0 && n.beat < self.notes[i - 1].beat {
                return Err(ExerciseError::at(i, "beats must be non-decreasing"));
            }
            if self.notes[..i]
                .iter()
                .any(|p| p.target == n.target && p.beat >= n.beat)
            {
                return Err(ExerciseError::at(i, "repeated beat for the same target"));
            }
        }
        if let Some(bar) = self.bar_beats {
            if bar <= self.max_beat() {
                return Err(ExerciseError::whole("bar_beats must exceed the last note's beat"));
            }
        }
        Ok(())
    }

    fn max_beat(&self) -> Beat {
        self.notes.iter().map(|n| n.beat).max().unwrap_or_else(Beat::zero)
    }

    /// Declared bar length, or the last beat rounded up to the next integer.
    pub fn loop_length_beats(&self) -> Beat {
        self.bar_beats
            .unwrap_or_else(|| self.max_beat().floor() + Beat::from_integer(1))
    }
}

/// Lays out every note of every loop in milliseconds at `tempo_bpm`.
pub fn expand(exercise: &Exercise, tempo_bpm: f64) -> ExpectedTimeline {
    assert!(tempo_bpm > 0.0, "tempo must be positive");
    let loop_len = exercise.loop_length_beats();
    let ms_per_beat = 60_000.0 / tempo_bpm;
    let mut entries = Vec::with_capacity(exercise.notes.len() * exercise.loops as usize);
    for loop_index in 0..exercise.loops {
        let offset = loop_len * Beat::from_integer(i64::from(loop_index));
        for (note_index, note) in exercise.notes.iter().enumerate() {
            let beat = note.beat + offset;
            let beats = beat.to_f64().expect("finite beat");
            entries.push(TimelineEntry {
                time_ms: beats * ms_per_beat,
                note_index,
                loop_index,
                target: note.target,
                velocity_range: note.velocity_range,
            });
        }
    }
    ExpectedTimeline { entries }
}
