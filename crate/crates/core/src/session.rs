//! On-disk session store: one JSON file per take plus a rebuildable index.
//!
//! ```text
//! <root>/takes/<take_id>.json
//! <root>/exercises/<exercise_id>.json
//! <root>/index.json
//! ```
//!
//! Writes go to a temporary sibling and are renamed into place, so readers
//! never observe partial files. One writer per root is assumed.

use std::fs;
use std::io::{self, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{analyze, AlignError, ClassifierConfig, Hit, OutcomeClass, TakeReport};
use crate::exercise::{exercise_to_json, expand, load_exercise, Cell, Exercise, ExerciseError, Instrument, TargetSpec};
use crate::guitar::{accumulate, GuitarError, TakeStats};
use crate::midi::map_key_to_pad;

/// Current take file version. Version `SCHEMA_VERSION - 1` files carry no
/// classifier or live report; their report is recomputed on load against
/// the stored exercise with the default classifier.
pub const SCHEMA_VERSION: u32 = 2;

const TAKES_DIR: &str = "takes";
const EXERCISES_DIR: &str = "exercises";
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("take {0} already exists")]
    DuplicateTakeId(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid take: {0}")]
    InvalidTake(String),
    #[error(transparent)]
    Exercise(#[from] ExerciseError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Guitar(#[from] GuitarError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Where a stored hit was played: a raw MIDI key (drums) or a fret cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HitSource {
    Key { key: u8 },
    Cell { cell: Cell },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredHit {
    pub t_ms: f64,
    #[serde(flatten)]
    pub source: HitSource,
    pub vel: u8,
}

impl StoredHit {
    /// Routes the hit to its target; drum keys outside the pad table yield
    /// `None`.
    pub fn to_hit(&self) -> Option<Hit> {
        let target = match self.source {
            HitSource::Key { key } => TargetSpec::pad(map_key_to_pad(key)?),
            HitSource::Cell { cell } => cell.into(),
        };
        Some(Hit {
            time_ms: self.t_ms,
            target,
            velocity: self.vel,
        })
    }
}

/// Routable hits of a take, in order. Report indices refer to this list.
pub fn routed_hits(hits: &[StoredHit]) -> Vec<Hit> {
    let routed: Vec<Hit> = hits.iter().filter_map(StoredHit::to_hit).collect();
    let dropped = hits.len() - routed.len();
    if dropped > 0 {
        warn!("dropped {dropped} hit(s) on keys outside the pad table");
    }
    routed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Take {
    pub version: u32,
    pub take_id: String,
    pub exercise_id: String,
    pub tempo_bpm: f64,
    pub started_at: DateTime<Utc>,
    pub classifier: ClassifierConfig,
    pub hits: Vec<StoredHit>,
    /// Exact batch alignment.
    pub report: TakeReport,
    /// What the live greedy matcher showed while playing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live_report: Option<TakeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live_vs_final_corrections: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<TakeStats>,
}

impl Take {
    pub fn validate(&self) -> Result<(), SessionError> {
        validate_take_id(&self.take_id)?;
        if self.exercise_id.is_empty() {
            return Err(SessionError::InvalidTake("empty exercise id".into()));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(SessionError::InvalidTake("tempo must be positive".into()));
        }
        if self.hits.windows(2).any(|w| !(w[0].t_ms <= w[1].t_ms)) {
            return Err(SessionError::InvalidTake("hits are not sorted by time".into()));
        }
        Ok(())
    }

    /// Recomputes report and stats from the stored hits.
    pub fn recompute(&mut self, exercise: &Exercise) -> Result<(), SessionError> {
        let timeline = expand(exercise, self.tempo_bpm);
        let hits = routed_hits(&self.hits);
        self.report = analyze(&timeline, &hits, &self.classifier)?;
        self.stats = match exercise.instrument {
            Instrument::Guitar => Some(accumulate(&self.take_id, &self.report, &timeline)?),
            Instrument::Drums => None,
        };
        Ok(())
    }
}

fn validate_take_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidTake(format!("take id {id:?} is not filename-safe")))
    }
}

static TAKE_SEQ: AtomicU32 = AtomicU32::new(0);

/// Lexicographically time-ordered id such as `20261016T101500.123Z-0001`.
pub fn new_take_id(started_at: DateTime<Utc>) -> String {
    let seq = TAKE_SEQ.fetch_add(1, Ordering::Relaxed) % 10_000;
    format!("{}-{seq:04}", started_at.format("%Y%m%dT%H%M%S%.3fZ"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub take_id: String,
    pub exercise_id: String,
    pub started_at: DateTime<Utc>,
    pub matched: u32,
    pub missed: u32,
    pub extra: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionIndex {
    /// Sorted by start time, then id.
    pub entries: Vec<IndexEntry>,
    /// Files that could not be read as takes.
    #[serde(default)]
    pub skipped: usize,
}

/// Fields needed for the index; tolerant of either schema version.
#[derive(Deserialize)]
struct TakeHeader {
    version: u32,
    take_id: String,
    exercise_id: String,
    started_at: DateTime<Utc>,
    #[serde(default)]
    report: Option<TakeReport>,
}

/// A session directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let dir = path.parent().expect("file path has a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn take_path(&self, take_id: &str) -> PathBuf {
        self.root.join(TAKES_DIR).join(format!("{take_id}.json"))
    }

    pub fn exercise_path(&self, exercise_id: &str) -> PathBuf {
        self.root.join(EXERCISES_DIR).join(format!("{exercise_id}.json"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    /// Writes a new take and refreshes the index.
    pub fn save_take(&self, take: &Take) -> Result<PathBuf, SessionError> {
        take.validate()?;
        let path = self.take_path(&take.take_id);
        if path.exists() {
            return Err(SessionError::DuplicateTakeId(take.take_id.clone()));
        }
        let mut current = take.clone();
        current.version = SCHEMA_VERSION;
        let bytes = serde_json::to_vec_pretty(&current).expect("take serializes");
        write_atomic(&path, &bytes)?;
        let index = self.list_takes(None)?;
        write_atomic(
            &self.index_path(),
            &serde_json::to_vec_pretty(&index).expect("index serializes"),
        )?;
        Ok(path)
    }

    pub fn load_take(&self, take_id: &str) -> Result<Take, SessionError> {
        validate_take_id(take_id)?;
        let path = self.take_path(take_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(SessionError::NotFound(format!("take {take_id}")))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        parse_take_json(&path, &text, |id| self.load_exercise(id))
    }

    /// Scans the take files; unreadable files are counted and skipped.
    pub fn list_takes(&self, exercise_id: Option<&str>) -> Result<SessionIndex, SessionError> {
        let dir = self.root.join(TAKES_DIR);
        let mut index = SessionIndex::default();
        let listing = match fs::read_dir(&dir) {
            Ok(l) => l,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(index),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        for item in listing {
            let item = item.map_err(io_err(&dir))?;
            let path = item.path();
            let name = item.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('.') || path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let header = fs::read_to_string(&path)
                .ok()
                .and_then(|t| serde_json::from_str::<TakeHeader>(&t).ok())
                .filter(|h| h.version <= SCHEMA_VERSION && path.file_stem().is_some_and(|s| *s == *h.take_id));
            let Some(h) = header else {
                warn!("skipping unreadable take file {}", path.display());
                index.skipped += 1;
                continue;
            };
            if exercise_id.is_some_and(|id| id != h.exercise_id) {
                continue;
            }
            let report = h.report.unwrap_or_default();
            index.entries.push(IndexEntry {
                take_id: h.take_id,
                exercise_id: h.exercise_id,
                started_at: h.started_at,
                matched: report.matched_count(),
                missed: report.count(OutcomeClass::Missed),
                extra: report.count(OutcomeClass::Extra),
            });
        }
        index
            .entries
            .sort_by(|a, b| a.started_at.cmp(&b.started_at).then_with(|| a.take_id.cmp(&b.take_id)));
        Ok(index)
    }

    /// The cached index written by the last save, if any.
    pub fn read_index(&self) -> Result<Option<SessionIndex>, SessionError> {
        let path = self.index_path();
        match fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t).map(Some).map_err(|e| SessionError::Schema {
                path,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Stores (or replaces) an exercise definition.
    pub fn save_exercise(&self, exercise: &Exercise) -> Result<PathBuf, SessionError> {
        validate_take_id(&exercise.id)
            .map_err(|_| SessionError::InvalidTake(format!("exercise id {:?} is not filename-safe", exercise.id)))?;
        let path = self.exercise_path(&exercise.id);
        write_atomic(&path, exercise_to_json(exercise).as_bytes())?;
        Ok(path)
    }

    pub fn load_exercise(&self, exercise_id: &str) -> Result<Exercise, SessionError> {
        let path = self.exercise_path(exercise_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(SessionError::NotFound(format!("exercise {exercise_id}")))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(load_exercise(&text)?)
    }
}

/// Parses and validates a take document. Older-version documents are
/// migrated, using `exercise` to look up the exercise they were played
/// against. `path` is only used in error messages.
pub fn parse_take_json(
    path: &Path,
    text: &str,
    exercise: impl FnOnce(&str) -> Result<Exercise, SessionError>,
) -> Result<Take, SessionError> {
    let schema = |message: String| SessionError::Schema {
        path: path.to_owned(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| schema("missing version".into()))?;
    let take = match u32::try_from(version) {
        Ok(SCHEMA_VERSION) => serde_json::from_value::<Take>(value).map_err(|e| schema(e.to_string()))?,
        Ok(v) if v + 1 == SCHEMA_VERSION => migrate_v1(value, exercise).map_err(|e| match e {
            SessionError::Schema { message, .. } => schema(message),
            other => other,
        })?,
        _ => return Err(schema(format!("unsupported version {version}"))),
    };
    take.validate().map_err(|e| schema(e.to_string()))?;
    Ok(take)
}

fn migrate_v1(
    value: serde_json::Value,
    exercise: impl FnOnce(&str) -> Result<Exercise, SessionError>,
) -> Result<Take, SessionError> {
    #[derive(Deserialize)]
    struct TakeV1 {
        take_id: String,
        exercise_id: String,
        tempo_bpm: f64,
        started_at: DateTime<Utc>,
        hits: Vec<StoredHit>,
    }
    let old: TakeV1 = serde_json::from_value(value).map_err(|e| SessionError::Schema {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    let exercise = exercise(&old.exercise_id)?;
    let mut take = Take {
        version: SCHEMA_VERSION,
        take_id: old.take_id,
        exercise_id: old.exercise_id,
        tempo_bpm: old.tempo_bpm,
        started_at: old.started_at,
        classifier: ClassifierConfig::default(),
        hits: old.hits,
        report: TakeReport::default(),
        live_report: None,
        live_vs_final_corrections: None,
        stats: None,
    };
    take.recompute(&exercise)?;
    Ok(take)
}

/// Free-function form of [`SessionStore::save_take`].
pub fn save_take(take: &Take, root: &Path) -> Result<PathBuf, SessionError> {
    SessionStore::new(root).save_take(take)
}

/// Free-function form of [`SessionStore::load_take`].
pub fn load_take(take_id: &str, root: &Path) -> Result<Take, SessionError> {
    SessionStore::new(root).load_take(take_id)
}

/// Free-function form of [`SessionStore::list_takes`].
pub fn list_takes(root: &Path, exercise_id: Option<&str>) -> Result<SessionIndex, SessionError> {
    SessionStore::new(root).list_takes(exercise_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exercise::{Beat, ExpectedNote, DEFAULT_VELOCITY_RANGE};
    use crate::midi::PadId;
    use chrono::TimeZone;

    fn exercise() -> Exercise {
        Exercise {
            id: "backbeat".into(),
            title: "Backbeat".into(),
            instrument: Instrument::Drums,
            tempo_bpm: 120.0,
            bar_beats: None,
            notes: (0..4)
                .map(|b| ExpectedNote {
                    beat: Beat::from_integer(b),
                    target: TargetSpec::pad(if b % 2 == 0 { PadId::Kick } else { PadId::Snare }),
                    velocity_range: DEFAULT_VELOCITY_RANGE,
                })
                .collect(),
            loops: 1,
        }
    }

    fn take(id: &str, exercise_id: &str, minute: u32) -> Take {
        let hits = vec![
            StoredHit { t_ms: 3.0, source: HitSource::Key { key: 36 }, vel: 90 },
            StoredHit { t_ms: 520.0, source: HitSource::Key { key: 38 }, vel: 90 },
            StoredHit { t_ms: 700.0, source: HitSource::Key { key: 61 }, vel: 90 },
        ];
        let mut t = Take {
            version: SCHEMA_VERSION,
            take_id: id.into(),
            exercise_id: exercise_id.into(),
            tempo_bpm: 120.0,
            started_at: Utc.with_ymd_and_hms(2026, 10, 16, 9, minute, 0).unwrap(),
            classifier: ClassifierConfig::default(),
            hits,
            report: TakeReport::default(),
            live_report: None,
            live_vs_final_corrections: None,
            stats: None,
        };
        t.recompute(&exercise()).unwrap();
        t
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        let t = take("t1", "backbeat", 0);
        let path = store.save_take(&t).unwrap();
        assert!(path.ends_with("takes/t1.json"));
        assert_eq!(store.list_takes(None).unwrap().entries.len(), 1);
        assert_eq!(store.load_take("t1").unwrap(), t);
        assert!(matches!(store.save_take(&t), Err(SessionError::DuplicateTakeId(_))));
        assert_eq!(store.read_index().unwrap().unwrap().entries.len(), 1);
    }

    #[test]
    fn unmapped_keys_do_not_reach_the_report() {
        let t = take("t1", "backbeat", 0);
        assert_eq!(t.report.count(OutcomeClass::Extra), 0);
        assert_eq!(t.report.matched_count(), 2);
        assert_eq!(t.report.count(OutcomeClass::Missed), 2);
    }

    #[test]
    fn missing_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        assert!(matches!(store.load_take("nope"), Err(SessionError::NotFound(_))));
        store.save_take(&take("t2", "backbeat", 0)).unwrap();
        let path = store.take_path("t2");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        match store.load_take("t2") {
            Err(SessionError::Schema { path: p, .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn listing_filters_sorts_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        assert!(store.list_takes(None).unwrap().entries.is_empty());
        store.save_take(&take("c", "backbeat", 30)).unwrap();
        store.save_take(&take("a", "other", 10)).unwrap();
        store.save_take(&take("b", "backbeat", 20)).unwrap();
        fs::write(dir.path().join("takes/stray.json"), "{not json").unwrap();
        let idx = store.list_takes(Some("backbeat")).unwrap();
        let ids: Vec<_> = idx.entries.iter().map(|e| e.take_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
        assert_eq!(idx.skipped, 1);
        assert_eq!(idx.entries[0].matched, 2);
    }

    #[test]
    fn index_is_rebuildable() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        store.save_take(&take("x", "backbeat", 1)).unwrap();
        store.save_take(&take("y", "backbeat", 2)).unwrap();
        let cached = store.read_index().unwrap().unwrap();
        fs::remove_file(store.index_path()).unwrap();
        assert_eq!(store.list_takes(None).unwrap(), cached);
    }

    #[test]
    fn version_one_is_migrated() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        store.save_exercise(&exercise()).unwrap();
        let current = take("old", "backbeat", 5);
        let mut v1 = serde_json::to_value(&current).unwrap();
        let obj = v1.as_object_mut().unwrap();
        obj.insert("version".into(), 1.into());
        obj.remove("classifier");
        obj.remove("report");
        fs::create_dir_all(dir.path().join("takes")).unwrap();
        fs::write(store.take_path("old"), serde_json::to_vec(&v1).unwrap()).unwrap();
        assert_eq!(store.load_take("old").unwrap(), current);

        obj_version(&mut v1, 7);
        fs::write(store.take_path("old"), serde_json::to_vec(&v1).unwrap()).unwrap();
        assert!(matches!(store.load_take("old"), Err(SessionError::Schema { .. })));
    }

    fn obj_version(v: &mut serde_json::Value, version: u32) {
        v.as_object_mut().unwrap().insert("version".into(), version.into());
    }

    #[test]
    fn rejects_unsafe_ids_and_unsorted_hits() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        let mut t = take("../evil", "backbeat", 0);
        assert!(matches!(store.save_take(&t), Err(SessionError::InvalidTake(_))));
        t.take_id = "ok".into();
        t.hits.swap(0, 1);
        assert!(matches!(store.save_take(&t), Err(SessionError::InvalidTake(_))));
    }

    #[test]
    fn exercise_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path());
        store.save_exercise(&exercise()).unwrap();
        assert_eq!(store.load_exercise("backbeat").unwrap(), exercise());
        assert!(matches!(store.load_exercise("zzz"), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn take_ids_are_time_ordered() {
        let a = new_take_id(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap());
        let b = new_take_id(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 1).unwrap());
        assert!(a < b);
        assert!(validate_take_id(&a).is_ok());
    }

    #[test]
    fn hit_json_shape() {
        let h = StoredHit { t_ms: 1.5, source: HitSource::Cell { cell: Cell::new(5, 3) }, vel: 70 };
        let v = serde_json::to_value(h).unwrap();
        assert_eq!(v, serde_json::json!({"t_ms": 1.5, "cell": {"string": 5, "fret": 3}, "vel": 70}));
        let k: StoredHit = serde_json::from_str(r#"{"t_ms":2,"key":38,"vel":100}"#).unwrap();
        assert_eq!(k.to_hit().unwrap().target, TargetSpec::pad(PadId::Snare));
    }
}
