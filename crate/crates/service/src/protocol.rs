//! WebSocket messages. Every message is one JSON object with a `type` field.

use practice_core::alignment::{FeedbackMode, MatchResult, OutcomeClass, TakeReport};
use practice_core::exercise::{Cell, TargetSpec};
use practice_core::scene::{SceneFrame, Surface};
use practice_core::session::SessionIndex;
use practice_core::{ArrangementMode, Correspondence, GlyphStyle};
use serde::{Deserialize, Serialize};

use crate::config::Encoder;

/// Which clock times a take: the server's monotonic clock, or explicit
/// `t_ms` values carried by the hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TakeClock {
    #[default]
    Wall,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SelectExercise {
        id: String,
    },
    SetMode {
        #[serde(default)]
        mode: Option<FeedbackMode>,
        #[serde(default)]
        encoder: Option<Encoder>,
    },
    StartTake {
        #[serde(default)]
        clock: TakeClock,
    },
    StopTake {},
    SetCalibration {
        surface: Surface,
        correspondences: Vec<Correspondence>,
    },
    SetArrangement {
        arrangement: ArrangementMode,
        #[serde(default)]
        style: Option<GlyphStyle>,
    },
    ListTakes {
        #[serde(default)]
        exercise_id: Option<String>,
    },
    LoadComparison {
        take_ids: Vec<String>,
    },
    /// A played note from the host's input adapter. `t_ms` is relative to
    /// the take start and required on a virtual clock.
    Hit {
        #[serde(default)]
        t_ms: Option<f64>,
        #[serde(default)]
        key: Option<u8>,
        #[serde(default)]
        cell: Option<Cell>,
        vel: u8,
    },
    /// A raw three-byte MIDI channel message.
    Midi {
        bytes: [u8; 3],
        #[serde(default)]
        t_ms: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Scene {
        frame: SceneFrame,
    },
    HitFeedback {
        result: MatchResult,
        /// Outcome class in the current mode.
        class: OutcomeClass,
        target: TargetSpec,
    },
    TakeSummary {
        take_id: String,
        report: TakeReport,
        live_report: TakeReport,
        live_vs_final_corrections: u32,
    },
    TakeList {
        index: SessionIndex,
    },
    CalibrationAck {
        surface: Surface,
        rms: f64,
        max: f64,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    NoExercise,
    NoTake,
    TakeInProgress,
    NotFound,
    OutOfOrder,
    CalibrationFailed,
    Storage,
    Internal,
}

impl ServerMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Parses a client message, turning any failure into a `bad_message` error.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    serde_json::from_str(text).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, e.to_string()))
}
