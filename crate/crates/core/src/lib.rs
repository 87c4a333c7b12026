//! Practice-feedback engine for drums and guitar.
//!
//! Performances arrive as MIDI (files or live messages), are matched against
//! exercise timelines, classified by timing and velocity, and compiled into
//! device-space scene frames for a projector or mirror display.
//!
//! Geometry (fretboards, glyph layout, homographies) is generic over
//! [`Real`]; the aliases below fix it to `f64`, which is what the service
//! uses.

pub mod alignment;
pub mod calibration;
pub mod drum;
pub mod exercise;
pub mod fretboard;
pub mod guitar;
pub mod live;
pub mod midi;
pub mod scalar;
pub mod scene;
pub mod session;

pub use scalar::Real;

pub type Homography = calibration::Homography<f64>;
pub type Correspondence = calibration::Correspondence<f64>;
pub type CalibrationFile = calibration::CalibrationFile<f64>;
pub type PadLayout = calibration::PadLayout<f64>;
pub type FretboardSpec = guitar::FretboardSpec<f64>;
pub type Glyph = fretboard::Glyph<f64>;
pub type GlyphStyle = fretboard::GlyphStyle<f64>;
pub type ArrangementMode = fretboard::ArrangementMode<f64>;
pub type FretboardScene = fretboard::FretboardScene<f64>;
pub type RigidTransform = fretboard::RigidTransform<f64>;
