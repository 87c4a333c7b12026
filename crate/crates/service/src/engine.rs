//! The pipeline state owner: exercise, active take, pad states, calibrations
//! and scene compilation. All time values are milliseconds on a monotonic
//! clock supplied by the caller.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use chrono::Utc;
use log::{debug, warn};
use practice_core::alignment::{ClassifierConfig, MatchResult, OutcomeClass};
use practice_core::drum::{fill_state, pie_summary, tachometer_state, Hold, Judgement, PadVisualState};
use practice_core::exercise::{expand, Exercise, Instrument, TargetSpec};
use practice_core::fretboard::{arrange, encode_cells, layout_balloons, Glyph, DEFAULT_STACK_SPACING_MM};
use practice_core::guitar::{accumulate, cell_for_midi, TakeStats};
use practice_core::live::{LiveEvent, LiveSession};
use practice_core::midi::{normalize_live, PadId, RawMidiMessage};
use practice_core::scene::{compile_mirror_scene, compile_projector_scene, SceneFrame, Surface};
use practice_core::session::{new_take_id, HitSource, SessionError, SessionStore, StoredHit, Take, SCHEMA_VERSION};
use practice_core::{ArrangementMode, CalibrationFile, Homography};

use crate::config::{Encoder, PipelineConfig};
use crate::protocol::{ClientMessage, ErrorCode, ServerMessage, TakeClock};

const CALIBRATION_DIR: &str = "calibration";

fn surface_name(surface: Surface) -> &'static str {
    match surface {
        Surface::Projector => "projector",
        Surface::Mirror => "mirror",
    }
}

/// Messages produced by one engine call, split by audience.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Reaction {
    /// For the connection that sent the message.
    pub reply: Vec<ServerMessage>,
    /// For every connection.
    pub broadcast: Vec<ServerMessage>,
}

impl Reaction {
    fn reply(msg: ServerMessage) -> Self {
        Self {
            reply: vec![msg],
            ..Default::default()
        }
    }

    fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Self::reply(ServerMessage::error(code, detail))
    }
}

struct ActiveTake {
    take_id: String,
    started_at: chrono::DateTime<Utc>,
    start_clock_ms: f64,
    clock: TakeClock,
    tempo_bpm: f64,
    live: LiveSession,
    stored: Vec<StoredHit>,
}

pub struct Engine {
    config: PipelineConfig,
    store: SessionStore,
    exercise: Option<Exercise>,
    calibrations: BTreeMap<Surface, Homography>,
    take: Option<ActiveTake>,
    /// Judgements of the current (or last) take, in arrival order.
    judgements: Vec<(PadId, Judgement)>,
    pad_states: BTreeMap<PadId, PadVisualState>,
    flash_until: BTreeMap<PadId, f64>,
    guitar_stats: Option<TakeStats>,
    comparison: Option<Vec<TakeStats>>,
    frame_id: u64,
    dirty: bool,
}

impl Engine {
    /// Loads any stored calibrations; surfaces without one use the identity.
    pub fn new(config: PipelineConfig, store: SessionStore) -> Self {
        let mut calibrations = BTreeMap::new();
        for surface in [Surface::Projector, Surface::Mirror] {
            let h = Self::read_calibration(&store, surface).unwrap_or_else(Homography::identity);
            calibrations.insert(surface, h);
        }
        Self {
            config,
            store,
            exercise: None,
            calibrations,
            take: None,
            judgements: Vec::new(),
            pad_states: BTreeMap::new(),
            flash_until: BTreeMap::new(),
            guitar_stats: None,
            comparison: None,
            frame_id: 0,
            dirty: true,
        }
    }

    fn calibration_path(store: &SessionStore, surface: Surface) -> PathBuf {
        store
            .root()
            .join(CALIBRATION_DIR)
            .join(format!("{}.json", surface_name(surface)))
    }

    fn read_calibration(store: &SessionStore, surface: Surface) -> Option<Homography> {
        let path = Self::calibration_path(store, surface);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CalibrationFile>(&text) {
            Ok(file) => Some(file.matrix),
            Err(e) => {
                warn!("ignoring unreadable calibration {}: {e}", path.display());
                None
            }
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn exercise(&self) -> Option<&Exercise> {
        self.exercise.as_ref()
    }

    pub fn take_in_progress(&self) -> bool {
        self.take.is_some()
    }

    pub fn calibration(&self, surface: Surface) -> Option<&Homography> {
        self.calibrations.get(&surface)
    }

    pub fn set_exercise(&mut self, exercise: Exercise) {
        self.exercise = Some(exercise);
        self.reset_feedback();
    }

    fn reset_feedback(&mut self) {
        self.judgements.clear();
        self.pad_states.clear();
        self.flash_until.clear();
        self.guitar_stats = None;
        self.dirty = true;
    }

    fn instrument(&self) -> Instrument {
        self.exercise.as_ref().map_or(Instrument::Drums, |e| e.instrument)
    }

    pub fn handle(&mut self, msg: ClientMessage, now_ms: f64) -> Reaction {
        match msg {
            ClientMessage::SelectExercise { id } => {
                if self.take.is_some() {
                    return Reaction::error(ErrorCode::TakeInProgress, "stop the take before switching exercise");
                }
                match self.store.load_exercise(&id) {
                    Ok(ex) => {
                        self.set_exercise(ex);
                        Reaction::default()
                    }
                    Err(SessionError::NotFound(what)) => Reaction::error(ErrorCode::NotFound, what),
                    Err(e) => Reaction::error(ErrorCode::Storage, e.to_string()),
                }
            }
            ClientMessage::SetMode { mode, encoder } => {
                if let Some(mode) = mode {
                    self.config.mode = mode;
                    self.config.classifier.mode = mode;
                }
                if let Some(encoder) = encoder {
                    self.config.encoder = encoder;
                }
                self.rebuild_pad_states(now_ms);
                Reaction::default()
            }
            ClientMessage::StartTake { clock } => self.start_take(clock, now_ms),
            ClientMessage::StopTake {} => self.stop_take(now_ms),
            ClientMessage::SetCalibration { surface, correspondences } => {
                let file = match CalibrationFile::from_correspondences(correspondences) {
                    Ok(f) => f,
                    Err(e) => return Reaction::error(ErrorCode::CalibrationFailed, e.to_string()),
                };
                let path = Self::calibration_path(&self.store, surface);
                let written = fs::create_dir_all(path.parent().expect("has parent"))
                    .and_then(|()| fs::write(&path, serde_json::to_vec_pretty(&file).expect("serializes")));
                self.calibrations.insert(surface, file.matrix);
                self.dirty = true;
                let mut r = Reaction::reply(ServerMessage::CalibrationAck {
                    surface,
                    rms: file.rms,
                    max: file.max,
                });
                if let Err(e) = written {
                    r.reply.push(ServerMessage::error(
                        ErrorCode::Storage,
                        format!("calibration applied but not saved: {e}"),
                    ));
                }
                r
            }
            ClientMessage::SetArrangement { arrangement, style } => {
                self.config.arrangement = arrangement;
                if let Some(style) = style {
                    self.config.glyph_style = style;
                }
                self.dirty = true;
                Reaction::default()
            }
            ClientMessage::ListTakes { exercise_id } => match self.store.list_takes(exercise_id.as_deref()) {
                Ok(index) => Reaction::reply(ServerMessage::TakeList { index }),
                Err(e) => Reaction::error(ErrorCode::Storage, e.to_string()),
            },
            ClientMessage::LoadComparison { take_ids } => self.load_comparison(&take_ids),
            ClientMessage::Hit { t_ms, key, cell, vel } => {
                let source = match (key, cell) {
                    (Some(key), None) => HitSource::Key { key },
                    (None, Some(cell)) => HitSource::Cell { cell },
                    _ => return Reaction::error(ErrorCode::BadMessage, "hit needs exactly one of key or cell"),
                };
                self.ingest(source, vel, t_ms, now_ms)
            }
            ClientMessage::Midi { bytes, t_ms } => {
                let raw = RawMidiMessage {
                    status: bytes[0],
                    data1: bytes[1],
                    data2: bytes[2],
                    timestamp_ms: t_ms.unwrap_or(now_ms),
                };
                let event = match normalize_live(&raw) {
                    Ok(Some(e)) => e,
                    Ok(None) => return Reaction::default(),
                    Err(e) => return Reaction::error(ErrorCode::BadMessage, e.to_string()),
                };
                let source = match self.instrument() {
                    Instrument::Drums => HitSource::Key { key: event.key },
                    Instrument::Guitar => match cell_for_midi(&event, &self.config.fretboard) {
                        Some(cell) => HitSource::Cell { cell },
                        None => {
                            debug!("midi note {} on channel {} is off the board", event.key, event.channel);
                            return Reaction::default();
                        }
                    },
                };
                self.ingest(source, event.velocity, t_ms, now_ms)
            }
        }
    }

    fn start_take(&mut self, clock: TakeClock, now_ms: f64) -> Reaction {
        if self.take.is_some() {
            return Reaction::error(ErrorCode::TakeInProgress, "a take is already running");
        }
        let Some(exercise) = &self.exercise else {
            return Reaction::error(ErrorCode::NoExercise, "select an exercise first");
        };
        let classifier = ClassifierConfig {
            mode: self.config.mode,
            ..self.config.classifier
        };
        let timeline = expand(exercise, exercise.tempo_bpm);
        let live = match LiveSession::new(timeline, classifier) {
            Ok(l) => l,
            Err(e) => return Reaction::error(ErrorCode::Internal, e.to_string()),
        };
        let started_at = Utc::now();
        self.take = Some(ActiveTake {
            take_id: new_take_id(started_at),
            started_at,
            start_clock_ms: now_ms,
            clock,
            tempo_bpm: exercise.tempo_bpm,
            live,
            stored: Vec::new(),
        });
        self.comparison = None;
        self.reset_feedback();
        Reaction::default()
    }

    fn ingest(&mut self, source: HitSource, vel: u8, t_ms: Option<f64>, now_ms: f64) -> Reaction {
        let Some(take) = self.take.as_mut() else {
            return Reaction::error(ErrorCode::NoTake, "no take is running");
        };
        let time_ms = match (take.clock, t_ms) {
            (TakeClock::Virtual, Some(t)) => t,
            (TakeClock::Virtual, None) => take.live.now_ms().max(0.0),
            (TakeClock::Wall, _) => now_ms - take.start_clock_ms,
        };
        let stored = StoredHit {
            t_ms: time_ms,
            source,
            vel,
        };
        let Some(hit) = stored.to_hit() else {
            debug!("ignoring hit on unmapped key {source:?}");
            return Reaction::default();
        };
        let results = match take.live.step(LiveEvent::Hit(hit)) {
            Ok(r) => r,
            Err(e) => return Reaction::error(ErrorCode::OutOfOrder, e.to_string()),
        };
        take.stored.push(stored);
        Reaction {
            reply: Vec::new(),
            broadcast: self.apply_results(&results, now_ms),
        }
    }

    /// Target and judgement of a live result against the active take.
    fn judge(&self, result: &MatchResult) -> Option<(TargetSpec, Judgement)> {
        let take = self.take.as_ref()?;
        let live = &take.live;
        let target = match result.expected_index() {
            Some(i) => live.timeline().entries[i].target,
            None => live.hits()[result.hit_index()?].target,
        };
        Some((target, Judgement::from_result(result, live.config())))
    }

    fn apply_results(&mut self, results: &[MatchResult], now_ms: f64) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        for r in results {
            let Some((target, judgement)) = self.judge(r) else { continue };
            out.push(ServerMessage::HitFeedback {
                result: *r,
                class: judgement.outcome(self.config.mode),
                target,
            });
            if let Some(pad) = target.as_pad() {
                self.judgements.push((pad, judgement));
                self.update_pad(pad, &judgement, now_ms);
            }
            self.dirty = true;
        }
        out
    }

    fn update_pad(&mut self, pad: PadId, judgement: &Judgement, now_ms: f64) {
        let cfg = &self.config;
        let state = match cfg.encoder {
            Encoder::Fill => {
                if let Hold::Flash { duration_ms } = cfg.fill_hold {
                    self.flash_until.insert(pad, now_ms + duration_ms);
                }
                fill_state(judgement, cfg.mode, &cfg.colors, cfg.fill_hold)
            }
            Encoder::Tachometer => tachometer_state(judgement, cfg.mode, &cfg.classifier, &cfg.colors),
            Encoder::Pie => {
                let mut counts: BTreeMap<OutcomeClass, u32> = BTreeMap::new();
                for (_, j) in self.judgements.iter().filter(|(p, _)| *p == pad) {
                    *counts.entry(j.outcome(cfg.mode)).or_default() += 1;
                }
                pie_summary(&counts, &cfg.colors)
            }
        };
        self.pad_states.insert(pad, state);
    }

    fn rebuild_pad_states(&mut self, now_ms: f64) {
        self.pad_states.clear();
        self.flash_until.clear();
        let judgements = std::mem::take(&mut self.judgements);
        let mut latest: BTreeMap<PadId, Judgement> = BTreeMap::new();
        for (pad, j) in &judgements {
            latest.insert(*pad, *j);
        }
        self.judgements = judgements;
        // Fills are transient; only persistent encodings are restored.
        if self.config.encoder != Encoder::Fill {
            for (pad, j) in latest {
                self.update_pad(pad, &j, now_ms);
            }
        }
        self.dirty = true;
    }

    /// Advances a wall-clock take and expires flashes.
    pub fn tick(&mut self, now_ms: f64) -> Vec<ServerMessage> {
        let expired: Vec<PadId> = self
            .flash_until
            .iter()
            .filter(|(_, &until)| until <= now_ms)
            .map(|(p, _)| *p)
            .collect();
        for pad in expired {
            self.flash_until.remove(&pad);
            self.pad_states.remove(&pad);
            self.dirty = true;
        }
        let Some(take) = self.take.as_mut() else {
            return Vec::new();
        };
        if take.clock != TakeClock::Wall {
            return Vec::new();
        }
        let t = now_ms - take.start_clock_ms;
        match take.live.step(LiveEvent::Tick(t)) {
            Ok(results) => self.apply_results(&results, now_ms),
            Err(e) => {
                debug!("tick skipped: {e}");
                Vec::new()
            }
        }
    }

    fn stop_take(&mut self, now_ms: f64) -> Reaction {
        let Some(active) = self.take.as_ref() else {
            return Reaction::error(ErrorCode::NoTake, "no take is running");
        };
        let timeline = active.live.timeline().clone();
        let (closing, outcome) = match active.live.clone().finish() {
            Ok(f) => f,
            Err(e) => return Reaction::error(ErrorCode::Internal, e.to_string()),
        };
        let mut broadcast = self.apply_results(&closing, now_ms);
        let take = self.take.take().expect("checked above");

        let stats = match self.instrument() {
            Instrument::Guitar => accumulate(&take.take_id, &outcome.final_report, &timeline).ok(),
            Instrument::Drums => None,
        };
        self.guitar_stats = stats.clone();
        let record = Take {
            version: SCHEMA_VERSION,
            take_id: take.take_id.clone(),
            exercise_id: self.exercise.as_ref().map(|e| e.id.clone()).unwrap_or_default(),
            tempo_bpm: take.tempo_bpm,
            started_at: take.started_at,
            classifier: *take.live.config(),
            hits: take.stored,
            report: outcome.final_report.clone(),
            live_report: Some(outcome.live_report.clone()),
            live_vs_final_corrections: Some(outcome.corrections),
            stats,
        };
        let mut reply = Vec::new();
        if let Err(e) = self.store.save_take(&record) {
            reply.push(ServerMessage::error(ErrorCode::Storage, e.to_string()));
        }
        broadcast.push(ServerMessage::TakeSummary {
            take_id: record.take_id,
            report: outcome.final_report,
            live_report: outcome.live_report,
            live_vs_final_corrections: outcome.corrections,
        });
        self.dirty = true;
        Reaction { reply, broadcast }
    }

    fn load_comparison(&mut self, take_ids: &[String]) -> Reaction {
        if take_ids.is_empty() {
            return Reaction::error(ErrorCode::BadMessage, "take_ids is empty");
        }
        let mut all = Vec::new();
        let mut reply = Vec::new();
        for id in take_ids {
            match self.store.load_take(id) {
                Ok(Take { stats: Some(stats), .. }) => all.push(stats),
                Ok(_) => reply.push(ServerMessage::error(
                    ErrorCode::NotFound,
                    format!("take {id} has no fretboard statistics"),
                )),
                Err(SessionError::NotFound(what)) => reply.push(ServerMessage::error(ErrorCode::NotFound, what)),
                Err(e) => reply.push(ServerMessage::error(ErrorCode::Storage, e.to_string())),
            }
        }
        if !all.is_empty() {
            self.comparison = Some(all);
            self.dirty = true;
        }
        Reaction {
            reply,
            broadcast: Vec::new(),
        }
    }

    /// Ends any open take, as on shutdown.
    pub fn shutdown(&mut self, now_ms: f64) -> Reaction {
        if self.take.is_some() {
            self.stop_take(now_ms)
        } else {
            Reaction::default()
        }
    }

    fn glyphs_for(&self, stats: &TakeStats) -> Option<Vec<Glyph<f64>>> {
        let cfg = &self.config;
        let glyphs = encode_cells(stats, cfg.glyph_style, &cfg.fretboard, &cfg.colors).ok()?;
        layout_balloons(&glyphs, &cfg.fretboard).ok()
    }

    fn mirror_boards(&self) -> Option<Vec<TakeStats>> {
        if let Some(take) = &self.take {
            if self.instrument() == Instrument::Guitar {
                let report = take.live.snapshot().ok()?;
                return Some(vec![accumulate(&take.take_id, &report, take.live.timeline()).ok()?]);
            }
            return None;
        }
        if let Some(c) = &self.comparison {
            return Some(c.clone());
        }
        self.guitar_stats.clone().map(|s| vec![s])
    }

    fn compile(&mut self, now_ms: f64) -> Vec<SceneFrame> {
        let mut frames = Vec::new();
        let cfg = &self.config;
        let show_projector = self.instrument() == Instrument::Drums;
        if show_projector {
            self.frame_id += 1;
            match compile_projector_scene(
                self.frame_id,
                now_ms,
                &self.pad_states,
                self.calibrations.get(&Surface::Projector),
                &cfg.layout,
            ) {
                Ok(f) => frames.push(f),
                Err(e) => warn!("projector frame dropped: {e}"),
            }
        }
        if let Some(boards) = self.mirror_boards() {
            let scenes: Option<Vec<(String, Vec<Glyph<f64>>)>> = boards
                .iter()
                .map(|s| Some((s.take_id.clone(), self.glyphs_for(s)?)))
                .collect();
            let Some(scenes) = scenes else {
                warn!("mirror frame dropped: glyph encoding failed");
                return frames;
            };
            let mode = match (&cfg.arrangement, scenes.len()) {
                (ArrangementMode::Stacked { spacing_mm, .. }, _) => ArrangementMode::Stacked {
                    spacing_mm: *spacing_mm,
                    order: scenes.iter().map(|s| s.0.clone()).collect(),
                },
                (single, 1) => single.clone(),
                (_, _) => ArrangementMode::Stacked {
                    spacing_mm: DEFAULT_STACK_SPACING_MM,
                    order: scenes.iter().map(|s| s.0.clone()).collect(),
                },
            };
            let frame = arrange(&scenes, &mode, &cfg.fretboard)
                .map_err(|e| e.to_string())
                .and_then(|scene| {
                    self.frame_id += 1;
                    compile_mirror_scene(
                        self.frame_id,
                        now_ms,
                        &scene,
                        &cfg.fretboard,
                        self.calibrations.get(&Surface::Mirror),
                    )
                    .map_err(|e| e.to_string())
                });
            match frame {
                Ok(f) => frames.push(f),
                Err(e) => warn!("mirror frame dropped: {e}"),
            }
        }
        frames
    }

    /// Frames for every active surface if anything changed since the last
    /// call.
    pub fn frames_if_dirty(&mut self, now_ms: f64) -> Vec<SceneFrame> {
        if !self.dirty {
            return Vec::new();
        }
        self.dirty = false;
        self.compile(now_ms)
    }

    /// Fresh frames regardless of changes, for a newly connected client.
    pub fn current_frames(&mut self, now_ms: f64) -> Vec<SceneFrame> {
        self.compile(now_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use practice_core::exercise::{load_exercise, Cell};
    use practice_core::scene::Primitive;

    fn engine(dir: &std::path::Path, instrument: &str) -> Engine {
        let store = SessionStore::new(dir);
        let target = if instrument == "drums" {
            r#"{"pad":"snare"}"#
        } else {
            r#"{"string":2,"fret":3}"#
        };
        let doc = format!(
            r#"{{"id":"ex","title":"t","instrument":"{instrument}","tempo_bpm":120,"loops":1,"notes":[
                {{"beat":0,"target":{target}}},{{"beat":1,"target":{target}}},{{"beat":2,"target":{target}}}]}}"#
        );
        let ex = load_exercise(&doc).unwrap();
        store.save_exercise(&ex).unwrap();
        let mut e = Engine::new(PipelineConfig::default(), store);
        assert!(e.handle(ClientMessage::SelectExercise { id: "ex".into() }, 0.0).reply.is_empty());
        e
    }

    fn virtual_hit(t: f64, key: u8) -> ClientMessage {
        ClientMessage::Hit {
            t_ms: Some(t),
            key: Some(key),
            cell: None,
            vel: 90,
        }
    }

    #[test]
    fn drum_take_flow() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "drums");
        assert!(e.handle(virtual_hit(0.0, 38), 0.0).reply[0] == ServerMessage::error(ErrorCode::NoTake, "no take is running"));
        e.handle(ClientMessage::StartTake { clock: TakeClock::Virtual }, 0.0);
        let r = e.handle(virtual_hit(10.0, 38), 1.0);
        assert!(matches!(
            r.broadcast[0],
            ServerMessage::HitFeedback { class: OutcomeClass::OnTime, .. }
        ));
        let frames = e.frames_if_dirty(1.0);
        assert_eq!(frames.len(), 1);
        let filled = frames[0]
            .primitives
            .iter()
            .filter(|p| matches!(p, Primitive::Polygon { fill: Some(_), .. }))
            .count();
        assert_eq!(filled, 1);
        assert!(e.frames_if_dirty(2.0).is_empty());

        // flash expires
        e.tick(1.0 + 150.0);
        let frames = e.frames_if_dirty(151.0);
        assert!(frames[0]
            .primitives
            .iter()
            .all(|p| matches!(p, Primitive::Polygon { fill: None, .. })));

        let r = e.handle(ClientMessage::StopTake {}, 200.0);
        let summaries: Vec<_> = r
            .broadcast
            .iter()
            .filter(|m| matches!(m, ServerMessage::TakeSummary { .. }))
            .collect();
        assert_eq!(summaries.len(), 1);
        let missed = r
            .broadcast
            .iter()
            .filter(|m| matches!(m, ServerMessage::HitFeedback { class: OutcomeClass::Missed, .. }))
            .count();
        assert_eq!(missed, 2);
        assert_eq!(e.store().list_takes(None).unwrap().entries.len(), 1);
    }

    #[test]
    fn out_of_order_virtual_hits() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "drums");
        e.handle(ClientMessage::StartTake { clock: TakeClock::Virtual }, 0.0);
        e.handle(virtual_hit(500.0, 38), 0.0);
        let r = e.handle(virtual_hit(100.0, 38), 0.0);
        assert!(matches!(r.reply[0], ServerMessage::Error { code: ErrorCode::OutOfOrder, .. }));
    }

    #[test]
    fn wall_clock_ticks_finalize_misses() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "drums");
        e.handle(ClientMessage::StartTake { clock: TakeClock::Wall }, 1000.0);
        let out = e.tick(1000.0 + 151.0);
        assert_eq!(out.len(), 1);
        assert!(e.tick(1000.0 + 200.0).is_empty());
    }

    #[test]
    fn guitar_take_feeds_mirror_and_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "guitar");
        let mut ids = Vec::new();
        for _ in 0..2 {
            e.handle(ClientMessage::StartTake { clock: TakeClock::Virtual }, 0.0);
            e.handle(
                ClientMessage::Hit {
                    t_ms: Some(5.0),
                    key: None,
                    cell: Some(Cell::new(2, 3)),
                    vel: 90,
                },
                0.0,
            );
            let frames = e.frames_if_dirty(0.0);
            assert_eq!(frames.len(), 1);
            assert_eq!(frames[0].surface, Surface::Mirror);
            let r = e.handle(ClientMessage::StopTake {}, 0.0);
            for m in r.broadcast {
                if let ServerMessage::TakeSummary { take_id, .. } = m {
                    ids.push(take_id);
                }
            }
        }
        let r = e.handle(ClientMessage::LoadComparison { take_ids: ids.clone() }, 0.0);
        assert!(r.reply.is_empty(), "{r:?}");
        let frames = e.frames_if_dirty(0.0);
        // two boards, one glyph each
        assert_eq!(frames[0].primitives.len(), 4);

        let r = e.handle(ClientMessage::LoadComparison { take_ids: vec!["missing".into()] }, 0.0);
        assert!(matches!(r.reply[0], ServerMessage::Error { code: ErrorCode::NotFound, .. }));
    }

    #[test]
    fn calibration_is_acknowledged_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "drums");
        let corr = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]
            .iter()
            .map(|&(x, y)| practice_core::Correspondence {
                world: (x, y),
                pixel: (2.0 * x + 10.0, 2.0 * y + 20.0),
            })
            .collect();
        let r = e.handle(
            ClientMessage::SetCalibration {
                surface: Surface::Projector,
                correspondences: corr,
            },
            0.0,
        );
        match &r.reply[0] {
            ServerMessage::CalibrationAck { rms, max, .. } => assert!(*rms < 1e-6 && *max < 1e-6),
            other => panic!("{other:?}"),
        }
        let again = Engine::new(PipelineConfig::default(), SessionStore::new(dir.path()));
        let p = again.calibration(Surface::Projector).unwrap().apply((1.0, 1.0)).unwrap();
        assert!((p.0 - 12.0).abs() < 1e-9 && (p.1 - 22.0).abs() < 1e-9);

        let r = e.handle(
            ClientMessage::SetCalibration {
                surface: Surface::Mirror,
                correspondences: Vec::new(),
            },
            0.0,
        );
        assert!(matches!(r.reply[0], ServerMessage::Error { code: ErrorCode::CalibrationFailed, .. }));
    }

    #[test]
    fn shutdown_persists_open_take() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = engine(dir.path(), "drums");
        e.handle(ClientMessage::StartTake { clock: TakeClock::Virtual }, 0.0);
        e.shutdown(0.0);
        assert_eq!(e.store().list_takes(None).unwrap().entries.len(), 1);
        assert!(e.shutdown(0.0).broadcast.is_empty());
    }
}
