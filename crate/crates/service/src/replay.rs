//! Feeds a recorded performance (SMF or stored take) through the live
//! pipeline and produces a finished take.
//!
//! Replaying at speed `s` divides every event time by `s`, expands the
//! exercise at `s` times its tempo, and divides the classifier thresholds by
//! `s`, so a replay at any speed classifies exactly like the recording.

use std::path::Path;
use std::time::{Duration, Instant};

use chrono::Utc;
use practice_core::alignment::ClassifierConfig;
use practice_core::exercise::{expand, Exercise, Instrument};
use practice_core::guitar::{accumulate, cell_for_midi};
use practice_core::live::{LiveError, LiveEvent, LiveSession};
use practice_core::midi::{parse_smf, MidiError};
use practice_core::session::{new_take_id, parse_take_json, HitSource, SessionError, StoredHit, Take, SCHEMA_VERSION};
use practice_core::FretboardSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Take(#[from] SessionError),
    #[error(transparent)]
    Live(#[from] LiveError),
    #[error("speed must be positive and finite, got {0}")]
    InvalidSpeed(f64),
    #[error("take was played against exercise {found}, not {expected}")]
    ExerciseMismatch { expected: String, found: String },
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub speed: f64,
    /// Sleep between events to follow the wall clock.
    pub realtime: bool,
    pub classifier: ClassifierConfig,
    pub fretboard: FretboardSpec,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            realtime: false,
            classifier: ClassifierConfig::default(),
            fretboard: FretboardSpec::default(),
        }
    }
}

/// Recorded hits at their original speed.
pub fn read_performance(path: &Path, exercise: &Exercise, fretboard: &FretboardSpec) -> Result<Vec<StoredHit>, ReplayError> {
    let bytes = std::fs::read(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.starts_with(b"MThd") {
        let parsed = parse_smf(&bytes)?;
        let hits = parsed
            .events
            .iter()
            .filter_map(|e| {
                let source = match exercise.instrument {
                    Instrument::Drums => HitSource::Key { key: e.key },
                    Instrument::Guitar => HitSource::Cell {
                        cell: cell_for_midi(e, fretboard)?,
                    },
                };
                Some(StoredHit {
                    t_ms: e.time_ms,
                    source,
                    vel: e.velocity,
                })
            })
            .collect();
        return Ok(hits);
    }
    let text = String::from_utf8_lossy(&bytes);
    let take = parse_take_json(path, &text, |_| Ok(exercise.clone()))?;
    if take.exercise_id != exercise.id {
        return Err(ReplayError::ExerciseMismatch {
            expected: exercise.id.clone(),
            found: take.exercise_id,
        });
    }
    Ok(take.hits)
}

/// Runs `hits` through a live session on a virtual clock and returns the
/// finished take (not yet persisted).
pub fn replay_hits(hits: &[StoredHit], exercise: &Exercise, options: &ReplayOptions) -> Result<Take, ReplayError> {
    let speed = options.speed;
    if !(speed.is_finite() && speed > 0.0) {
        return Err(ReplayError::InvalidSpeed(speed));
    }
    let tempo_bpm = exercise.tempo_bpm * speed;
    let classifier = options.classifier.scaled(1.0 / speed);
    let timeline = expand(exercise, tempo_bpm);
    let mut live = LiveSession::new(timeline.clone(), classifier)?;

    let scaled: Vec<StoredHit> = hits
        .iter()
        .map(|h| StoredHit {
            t_ms: h.t_ms / speed,
            ..*h
        })
        .collect();
    let wall = Instant::now();
    for h in &scaled {
        let Some(hit) = h.to_hit() else { continue };
        if options.realtime {
            let due = Duration::from_secs_f64(hit.time_ms.max(0.0) / 1000.0);
            if let Some(wait) = due.checked_sub(wall.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        live.step(LiveEvent::Hit(hit))?;
    }
    let (_, outcome) = live.finish()?;

    let started_at = Utc::now();
    let take_id = new_take_id(started_at);
    let stats = match exercise.instrument {
        Instrument::Guitar => Some(
            accumulate(&take_id, &outcome.final_report, &timeline).map_err(SessionError::from)?,
        ),
        Instrument::Drums => None,
    };
    Ok(Take {
        version: SCHEMA_VERSION,
        take_id,
        exercise_id: exercise.id.clone(),
        tempo_bpm,
        started_at,
        classifier,
        hits: scaled,
        report: outcome.final_report,
        live_report: Some(outcome.live_report),
        live_vs_final_corrections: Some(outcome.corrections),
        stats,
    })
}

/// [`read_performance`] followed by [`replay_hits`].
pub fn replay(input: &Path, exercise: &Exercise, options: &ReplayOptions) -> Result<Take, ReplayError> {
    let hits = read_performance(input, exercise, &options.fretboard)?;
    replay_hits(&hits, exercise, options)
}
