//! Pipeline configuration, loadable from a JSON file.

use std::path::Path;

use practice_core::alignment::{ClassifierConfig, FeedbackMode};
use practice_core::drum::{ColorScale, Hold};
use practice_core::{ArrangementMode, FretboardSpec, GlyphStyle, PadLayout};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FRAME_RATE_HZ: f64 = 30.0;
pub const DEFAULT_BALLOON_RADIUS_MM: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    #[default]
    Fill,
    Tachometer,
    Pie,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: FeedbackMode,
    pub encoder: Encoder,
    pub classifier: ClassifierConfig,
    pub arrangement: ArrangementMode,
    pub glyph_style: GlyphStyle,
    pub frame_rate_hz: f64,
    /// How long a fill stays lit after a judgement.
    pub fill_hold: Hold,
    pub colors: ColorScale,
    pub layout: PadLayout,
    pub fretboard: FretboardSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: FeedbackMode::Timing,
            encoder: Encoder::Fill,
            classifier: ClassifierConfig::default(),
            arrangement: ArrangementMode::InPlace,
            glyph_style: GlyphStyle::Balloon {
                max_radius_mm: DEFAULT_BALLOON_RADIUS_MM,
            },
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            fill_hold: Hold::flash(),
            colors: ColorScale::default(),
            layout: PadLayout::compact_kit(),
            fretboard: FretboardSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1.0..=120.0).contains(&self.frame_rate_hz) {
            return Err(ConfigError::Invalid(format!(
                "frame_rate_hz must be within [1, 120], got {}",
                self.frame_rate_hz
            )));
        }
        self.classifier
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fretboard
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: shown,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }
}
