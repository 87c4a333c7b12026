//! Device-space drawing frames for the projector and mirror surfaces.
//!
//! A frame is a flat list of 2D primitives in surface pixels. Projector
//! frames are built from pad states and the pad layout; mirror frames from
//! an arranged fretboard scene. Three-dimensional glyph geometry is flattened
//! with a fixed oblique projection, `(x, y, z) -> (x, y + z)` in board
//! millimetres, before the surface homography is applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::drum::{PadVisualState, PieSegment, Rgb};
use crate::exercise::Cell;
use crate::fretboard::{GlyphKind, Vec3};
use crate::guitar::{cell_center, GuitarError};
use crate::midi::PadId;
use crate::{FretboardScene, FretboardSpec, Homography, PadLayout};

pub const OUTLINE_COLOR: Rgba = Rgba(255, 255, 255, 255);
/// Needle length and pie radius as a share of the pad's inner radius.
pub const PAD_GLYPH_FILL: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Projector,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u8; 4]", into = "[u8; 4]")]
pub struct Rgba(pub u8, pub u8, pub u8, pub u8);

impl From<[u8; 4]> for Rgba {
    fn from([r, g, b, a]: [u8; 4]) -> Self {
        Rgba(r, g, b, a)
    }
}

impl From<Rgba> for [u8; 4] {
    fn from(c: Rgba) -> Self {
        [c.0, c.1, c.2, c.3]
    }
}

impl From<Rgb> for Rgba {
    fn from(c: Rgb) -> Self {
        Rgba(c.0, c.1, c.2, 255)
    }
}

pub type Px = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Polygon {
        vertices: Vec<Px>,
        fill: Option<Rgba>,
        stroke: Option<Rgba>,
    },
    Needle {
        center: Px,
        angle_deg: f64,
        length: f64,
        color: Rgba,
    },
    Pie {
        center: Px,
        radius: f64,
        segments: Vec<PieSegment>,
    },
    /// Stacked bar rising from `base` toward `top`.
    Bar {
        base: Px,
        top: Px,
        height: f64,
        width: f64,
        segments: Vec<PieSegment>,
    },
    Balloon {
        center: Px,
        radius: f64,
        leader: [Px; 2],
        segments: Vec<PieSegment>,
    },
    Text {
        label: String,
        anchor: Px,
    },
}

impl Primitive {
    fn points(&self) -> Vec<f64> {
        match self {
            Primitive::Polygon { vertices, .. } => vertices.iter().flatten().copied().collect(),
            Primitive::Needle { center, angle_deg, length, .. } => vec![center[0], center[1], *angle_deg, *length],
            Primitive::Pie { center, radius, .. } => vec![center[0], center[1], *radius],
            Primitive::Bar { base, top, height, width, .. } => vec![base[0], base[1], top[0], top[1], *height, *width],
            Primitive::Balloon { center, radius, leader, .. } => {
                vec![center[0], center[1], *radius, leader[0][0], leader[0][1], leader[1][0], leader[1][1]]
            }
            Primitive::Text { anchor, .. } => anchor.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub frame_id: u64,
    pub surface: Surface,
    pub timestamp_ms: f64,
    pub primitives: Vec<Primitive>,
}

impl SceneFrame {
    /// Canonical serialization; equal frames give equal bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("frame serializes")
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp_ms.is_finite() && self.primitives.iter().all(|p| p.points().iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("no calibration for the {0:?} surface")]
    MissingCalibration(Surface),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Geometry(#[from] GuitarError),
    #[error("primitive coordinates are not finite")]
    NonFinite,
}

fn px(h: &Homography, p: (f64, f64)) -> Result<Px, SceneError> {
    let (u, v) = h.apply(p)?;
    Ok([u, v])
}

fn checked(frame: SceneFrame) -> Result<SceneFrame, SceneError> {
    if frame.is_finite() {
        Ok(frame)
    } else {
        Err(SceneError::NonFinite)
    }
}

/// Pad outlines plus the current state of each active pad, in pad order.
pub fn compile_projector_scene(
    frame_id: u64,
    timestamp_ms: f64,
    states: &BTreeMap<PadId, PadVisualState>,
    calibration: Option<&Homography>,
    layout: &PadLayout,
) -> Result<SceneFrame, SceneError> {
    let h = calibration.ok_or(SceneError::MissingCalibration(Surface::Projector))?;
    let mut primitives = Vec::new();
    for (pad, poly) in layout.pads() {
        let vertices = poly.iter().map(|&p| px(h, p)).collect::<Result<Vec<_>, _>>()?;
        let n = vertices.len() as f64;
        let center = [
            vertices.iter().map(|v| v[0]).sum::<f64>() / n,
            vertices.iter().map(|v| v[1]).sum::<f64>() / n,
        ];
        let inner = vertices
            .iter()
            .map(|v| (v[0] - center[0]).hypot(v[1] - center[1]))
            .fold(f64::INFINITY, f64::min);
        primitives.push(Primitive::Polygon {
            vertices: vertices.clone(),
            fill: None,
            stroke: Some(OUTLINE_COLOR),
        });
        let Some(state) = states.get(pad) else { continue };
        primitives.push(match state {
            PadVisualState::Fill { color, .. } => Primitive::Polygon {
                vertices,
                fill: Some((*color).into()),
                stroke: None,
            },
            PadVisualState::Tachometer { angle_deg, color } => Primitive::Needle {
                center,
                angle_deg: *angle_deg,
                length: PAD_GLYPH_FILL * inner,
                color: (*color).into(),
            },
            PadVisualState::Pie { segments } => Primitive::Pie {
                center,
                radius: PAD_GLYPH_FILL * inner,
                segments: segments.clone(),
            },
        });
    }
    checked(SceneFrame {
        frame_id,
        surface: Surface::Projector,
        timestamp_ms,
        primitives,
    })
}

/// Board plane point after the oblique flattening.
pub fn flatten(p: Vec3<f64>) -> (f64, f64) {
    (p[0], p[1] + p[2])
}

/// One outline polygon per board, then its glyphs ordered by cell and
/// height.
pub fn compile_mirror_scene(
    frame_id: u64,
    timestamp_ms: f64,
    scene: &FretboardScene,
    spec: &FretboardSpec,
    calibration: Option<&Homography>,
) -> Result<SceneFrame, SceneError> {
    let h = calibration.ok_or(SceneError::MissingCalibration(Surface::Mirror))?;
    let spacing = spec.string_spacing_mm;
    let mut primitives = Vec::new();
    for board in &scene.boards {
        let t = &board.transform;
        let to_px = |p: Vec3<f64>| px(h, flatten(t.apply(p)));
        let vertices = scene
            .outline
            .corners
            .iter()
            .map(|&c| to_px(c))
            .collect::<Result<Vec<_>, _>>()?;
        primitives.push(Primitive::Polygon {
            vertices,
            fill: None,
            stroke: Some(OUTLINE_COLOR),
        });

        let mut glyphs: Vec<_> = board.glyphs.iter().collect();
        glyphs.sort_by(|a, b| {
            (a.anchor, a.lift())
                .partial_cmp(&(b.anchor, b.lift()))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for g in glyphs {
            let (x, y) = cell_center(g.anchor, spec)?;
            let ground = [x, y, 0.0];
            let base = to_px(ground)?;
            let scale = h.local_scale(flatten(t.apply(ground)))?;
            let segments = g.segments.clone();
            primitives.push(match g.kind {
                GlyphKind::FlatBar { height_norm } => {
                    let top = to_px([x, y + height_norm * spacing, 0.0])?;
                    Primitive::Bar {
                        base,
                        top,
                        height: (top[0] - base[0]).hypot(top[1] - base[1]),
                        width: 0.5 * spacing * scale,
                        segments,
                    }
                }
                GlyphKind::FlatPie { size_norm } => Primitive::Pie {
                    center: base,
                    radius: 0.5 * spacing * size_norm.sqrt() * scale,
                    segments,
                },
                GlyphKind::Bar3d { height_mm } => {
                    let top = to_px([x, y, height_mm])?;
                    Primitive::Bar {
                        base,
                        top,
                        height: (top[0] - base[0]).hypot(top[1] - base[1]),
                        width: 0.5 * spacing * scale,
                        segments,
                    }
                }
                GlyphKind::Balloon { radius_mm, lift_mm, leader_anchor } => {
                    let lifted = [x, y, lift_mm];
                    let center = to_px(lifted)?;
                    let r = radius_mm * h.local_scale(flatten(t.apply(lifted)))?;
                    Primitive::Balloon {
                        center,
                        radius: r,
                        leader: [center, to_px([leader_anchor.0, leader_anchor.1, 0.0])?],
                        segments,
                    }
                }
            });
        }
    }
    checked(SceneFrame {
        frame_id,
        surface: Surface::Mirror,
        timestamp_ms,
        primitives,
    })
}

/// Cell stats tooltip text as shown when hovering a glyph.
pub fn cell_label(cell: Cell, played: u32, missed: u32, extra: u32) -> String {
    format!(
        "string {} fret {}: played {played}, missed {missed}, extra {extra}",
        cell.string, cell.fret
    )
}
