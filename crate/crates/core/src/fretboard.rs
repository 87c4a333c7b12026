//! Positioned chart glyphs on a virtual fretboard and board arrangements.
//!
//! Glyph size encodes the number of attempts at a cell (played + missed +
//! extra); glyph color segments encode how those attempts went.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{OutcomeClass, TimingClass};
use crate::drum::{ColorScale, PieSegment};
use crate::exercise::Cell;
use crate::guitar::{cell_center, FretCellStats, FretboardSpec, GuitarError, TakeStats};
use crate::scalar::Real;

/// Lift of a balloon with no conflicting neighbours.
pub const BALLOON_BASE_LIFT_MM: f64 = 25.0;
pub const DEFAULT_STACK_SPACING_MM: f64 = 30.0;

pub type Vec3<T> = [T; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FretboardError {
    #[error("arrangement expects {expected} take(s), got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("stacking order is invalid: {0}")]
    InvalidOrder(String),
    #[error(transparent)]
    Geometry(#[from] GuitarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum GlyphStyle<T> {
    FlatBar,
    FlatPie,
    Bar3d { max_height_mm: T },
    Balloon { max_radius_mm: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlyphKind<T> {
    FlatBar { height_norm: T },
    FlatPie { size_norm: T },
    Bar3d { height_mm: T },
    Balloon {
        radius_mm: T,
        lift_mm: T,
        leader_anchor: (T, T),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph<T> {
    pub anchor: Cell,
    pub kind: GlyphKind<T>,
    pub segments: Vec<PieSegment>,
    /// Attempts behind the glyph, kept for tooltips.
    pub stats: FretCellStats,
}

impl<T: Real> Glyph<T> {
    /// Normalized size in [0, 1] regardless of style.
    pub fn size_norm(&self, style_max: T) -> T {
        match self.kind {
            GlyphKind::FlatBar { height_norm } => height_norm,
            GlyphKind::FlatPie { size_norm } => size_norm,
            GlyphKind::Bar3d { height_mm } => height_mm / style_max,
            GlyphKind::Balloon { radius_mm, .. } => radius_mm / style_max,
        }
    }

    /// Height of the glyph's anchor point above the board plane.
    pub fn lift(&self) -> T {
        match self.kind {
            GlyphKind::Balloon { lift_mm, .. } => lift_mm,
            _ => T::zero(),
        }
    }
}

fn outcome_segments(stats: &FretCellStats, scale: &ColorScale) -> Vec<PieSegment> {
    let total = stats.total();
    if total == 0 {
        return Vec::new();
    }
    let timing = TimingClass::ALL
        .iter()
        .map(|t| (OutcomeClass::from(*t), stats.timing_bins.get(t).copied().unwrap_or(0)));
    timing
        .chain([(OutcomeClass::Missed, stats.missed), (OutcomeClass::Extra, stats.extra)])
        .filter(|(_, n)| *n > 0)
        .map(|(class, n)| PieSegment {
            class,
            fraction: f64::from(n) / f64::from(total),
            color: scale.color(class),
        })
        .collect()
}

/// One glyph per cell with a nonzero total, sized by total over the
/// largest cell total.
pub fn encode_cells<T: Real>(
    stats: &TakeStats,
    style: GlyphStyle<T>,
    spec: &FretboardSpec<T>,
    scale: &ColorScale,
) -> Result<Vec<Glyph<T>>, GuitarError> {
    let max_total = stats.cells.values().map(FretCellStats::total).max().unwrap_or(0);
    let mut glyphs = Vec::new();
    for (cell, s) in &stats.cells {
        let total = s.total();
        if total == 0 {
            continue;
        }
        let norm = T::lit(f64::from(total)) / T::lit(f64::from(max_total));
        let kind = match style {
            GlyphStyle::FlatBar => GlyphKind::FlatBar { height_norm: norm },
            GlyphStyle::FlatPie => GlyphKind::FlatPie { size_norm: norm },
            GlyphStyle::Bar3d { max_height_mm } => GlyphKind::Bar3d {
                height_mm: norm * max_height_mm,
            },
            GlyphStyle::Balloon { max_radius_mm } => GlyphKind::Balloon {
                // area tracks the count
                radius_mm: norm.sqrt() * max_radius_mm,
                lift_mm: T::lit(BALLOON_BASE_LIFT_MM),
                leader_anchor: cell_center(*cell, spec)?,
            },
        };
        glyphs.push(Glyph {
            anchor: *cell,
            kind,
            segments: outcome_segments(s, scale),
            stats: s.clone(),
        });
    }
    Ok(glyphs)
}

/// Assigns balloon lifts so that balloons whose anchors lie within the sum
/// of their radii are separated vertically by at least that sum. Balloons
/// are placed greedily in ascending x, then string order. Other glyphs pass
/// through unchanged.
pub fn layout_balloons<T: Real>(glyphs: &[Glyph<T>], spec: &FretboardSpec<T>) -> Result<Vec<Glyph<T>>, GuitarError> {
    let mut out = glyphs.to_vec();
    let mut order = Vec::new();
    for (i, g) in glyphs.iter().enumerate() {
        if let GlyphKind::Balloon { radius_mm, .. } = g.kind {
            let (x, y) = cell_center(g.anchor, spec)?;
            order.push((i, x, y, radius_mm));
        }
    }
    order.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(glyphs[a.0].anchor.string.cmp(&glyphs[b.0].anchor.string))
            .then(a.0.cmp(&b.0))
    });

    let mut placed: Vec<(T, T, T, T)> = Vec::new(); // x, y, radius, lift
    for &(i, x, y, r) in &order {
        let mut lift = T::lit(BALLOON_BASE_LIFT_MM);
        loop {
            let clash = placed.iter().find(|&&(px, py, pr, pl)| {
                let reach = r + pr;
                let planar = ((x - px).powi(2) + (y - py).powi(2)).sqrt();
                planar <= reach && (lift - pl).abs() < reach
            });
            match clash {
                Some(&(_, _, pr, pl)) => lift = pl + r + pr,
                None => break,
            }
        }
        placed.push((x, y, r, lift));
        if let GlyphKind::Balloon { lift_mm, .. } = &mut out[i].kind {
            *lift_mm = lift;
        }
    }
    Ok(out)
}

/// Rotation followed by translation in instrument-local millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T> {
    pub rotation: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z, z, z],
        }
    }

    pub fn translation(offset: Vec3<T>) -> Self {
        Self {
            translation: offset,
            ..Self::identity()
        }
    }

    /// Rotation about the nut edge (the local y axis) lifting the neck
    /// (+x) toward +z.
    pub fn hinge_up(angle_deg: T) -> Self {
        let a = angle_deg.to_radians();
        let (s, c) = a.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[c, z, -s], [z, o, z], [s, z, c]],
            translation: [z, z, z],
        }
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + self.translation[i])
    }

    pub fn determinant(&self) -> T {
        let m = &self.rotation;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt: [[T; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]));
        let t = self.translation;
        let back = std::array::from_fn(|i| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]));
        Self {
            rotation: rt,
            translation: back,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ArrangementMode<T> {
    InPlace,
    Translated { offset_mm: Vec3<T> },
    FlippedUp { angle_deg: T },
    Stacked { spacing_mm: T, order: Vec<String> },
}

impl<T: Real> Default for ArrangementMode<T> {
    fn default() -> Self {
        ArrangementMode::InPlace
    }
}

/// Line segments of the bare board in local coordinates (z = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardOutline<T> {
    /// Nut, last fret, and the two outer strings, in drawing order.
    pub corners: [Vec3<T>; 4],
    pub frets: Vec<[Vec3<T>; 2]>,
    pub strings: Vec<[Vec3<T>; 2]>,
}

impl<T: Real> BoardOutline<T> {
    pub fn new(spec: &FretboardSpec<T>) -> Self {
        let half = spec.board_width_mm() / T::lit(2.0);
        let len = spec.board_length_mm();
        let z = T::zero();
        let frets = (0..=spec.fret_count)
            .map(|f| {
                let x = spec.scale_length_mm * (T::one() - T::lit(2.0).powf(-T::lit(f64::from(f)) / T::lit(12.0)));
                [[x, -half, z], [x, half, z]]
            })
            .collect();
        let strings = (1..=6u8)
            .map(|s| {
                let y = (T::lit(f64::from(s)) - T::lit(3.5)) * spec.string_spacing_mm;
                [[z, y, z], [len, y, z]]
            })
            .collect();
        Self {
            corners: [[z, -half, z], [len, -half, z], [len, half, z], [z, half, z]],
            frets,
            strings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardView<T> {
    pub take_id: String,
    pub transform: RigidTransform<T>,
    pub glyphs: Vec<Glyph<T>>,
}

impl<T: Real> BoardView<T> {
    /// Glyph anchor points (cell center, raised by any lift) after the
    /// board transform.
    pub fn world_anchors(&self, spec: &FretboardSpec<T>) -> Result<Vec<Vec3<T>>, GuitarError> {
        self.glyphs
            .iter()
            .map(|g| {
                let (x, y) = cell_center(g.anchor, spec)?;
                Ok(self.transform.apply([x, y, g.lift()]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FretboardScene<T> {
    pub boards: Vec<BoardView<T>>,
    pub outline: BoardOutline<T>,
}

/// Places one or more boards.
pub fn arrange<T: Real>(
    scenes: &[(String, Vec<Glyph<T>>)],
    mode: &ArrangementMode<T>,
    spec: &FretboardSpec<T>,
) -> Result<FretboardScene<T>, FretboardError> {
    let single = |transform: RigidTransform<T>| {
        if scenes.len() != 1 {
            return Err(FretboardError::ArityMismatch {
                expected: 1,
                got: scenes.len(),
            });
        }
        Ok(vec![BoardView {
            take_id: scenes[0].0.clone(),
            transform,
            glyphs: scenes[0].1.clone(),
        }])
    };
    let boards = match mode {
        ArrangementMode::InPlace => single(RigidTransform::identity())?,
        ArrangementMode::Translated { offset_mm } => single(RigidTransform::translation(*offset_mm))?,
        ArrangementMode::FlippedUp { angle_deg } => single(RigidTransform::hinge_up(*angle_deg))?,
        ArrangementMode::Stacked { spacing_mm, order } => {
            if order.is_empty() {
                return Err(FretboardError::ArityMismatch { expected: 1, got: 0 });
            }
            if order.len() != scenes.len() {
                return Err(FretboardError::ArityMismatch {
                    expected: order.len(),
                    got: scenes.len(),
                });
            }
            let unique: BTreeSet<_> = order.iter().collect();
            if unique.len() != order.len() {
                return Err(FretboardError::InvalidOrder("duplicate take id".into()));
            }
            let pitch = *spacing_mm + spec.board_width_mm();
            order
                .iter()
                .enumerate()
                .map(|(k, id)| {
                    let (_, glyphs) = scenes
                        .iter()
                        .find(|(sid, _)| sid == id)
                        .ok_or_else(|| FretboardError::InvalidOrder(format!("no scene for take {id}")))?;
                    let dy = -(T::lit(k as f64) * pitch);
                    Ok(BoardView {
                        take_id: id.clone(),
                        transform: RigidTransform::translation([T::zero(), dy, T::zero()]),
                        glyphs: glyphs.clone(),
                    })
                })
                .collect::<Result<Vec<_>, FretboardError>>()?
        }
    };
    Ok(FretboardScene {
        boards,
        outline: BoardOutline::new(spec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn stats(cells: &[(Cell, u32, u32, u32)]) -> TakeStats {
        let cells: BTreeMap<_, _> = cells
            .iter()
            .map(|&(cell, played, missed, extra)| {
                (
                    cell,
                    FretCellStats {
                        cell,
                        played,
                        missed,
                        extra,
                        timing_bins: if played > 0 { [(TimingClass::OnTime, played)].into() } else { BTreeMap::new() },
                    },
                )
            })
            .collect();
        TakeStats { take_id: "t".into(), cells }
    }

    #[test]
    fn encode_examples() {
        let spec = FretboardSpec::<f64>::default();
        let scale = ColorScale::default();
        assert!(encode_cells(&TakeStats::default(), GlyphStyle::FlatBar, &spec, &scale).unwrap().is_empty());

        let g = encode_cells(&stats(&[(Cell::new(5, 3), 4, 0, 0)]), GlyphStyle::FlatBar, &spec, &scale).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].kind, GlyphKind::FlatBar { height_norm: 1.0 });
        assert_eq!(g[0].segments.len(), 1);
        assert_eq!(g[0].segments[0].fraction, 1.0);

        let g = encode_cells(
            &stats(&[(Cell::new(1, 1), 1, 1, 0), (Cell::new(2, 2), 5, 2, 1), (Cell::new(3, 3), 0, 0, 0)]),
            GlyphStyle::FlatBar,
            &spec,
            &scale,
        )
        .unwrap();
        let heights: Vec<_> = g.iter().map(|g| g.size_norm(1.0)).collect();
        assert_eq!(heights, vec![0.25, 1.0]);
        let classes: Vec<_> = g[1].segments.iter().map(|s| s.class).collect();
        assert_eq!(classes, vec![OutcomeClass::OnTime, OutcomeClass::Missed, OutcomeClass::Extra]);
    }

    #[test]
    fn balloon_radius_tracks_area() {
        let spec = FretboardSpec::<f64>::default();
        let g = encode_cells(
            &stats(&[(Cell::new(1, 1), 1, 0, 0), (Cell::new(1, 9), 4, 0, 0)]),
            GlyphStyle::Balloon { max_radius_mm: 10.0 },
            &spec,
            &ColorScale::default(),
        )
        .unwrap();
        let GlyphKind::Balloon { radius_mm, leader_anchor, .. } = g[0].kind else { panic!() };
        assert_eq!(radius_mm, 5.0);
        assert_eq!(leader_anchor, cell_center(Cell::new(1, 1), &spec).unwrap());
    }

    fn balloon(cell: Cell, r: f64, spec: &FretboardSpec<f64>) -> Glyph<f64> {
        Glyph {
            anchor: cell,
            kind: GlyphKind::Balloon { radius_mm: r, lift_mm: 0.0, leader_anchor: cell_center(cell, spec).unwrap() },
            segments: vec![],
            stats: FretCellStats::default(),
        }
    }

    fn lifts(g: &[Glyph<f64>]) -> Vec<f64> {
        g.iter().map(Glyph::lift).collect()
    }

    #[test]
    fn balloon_layout_examples() {
        let spec = FretboardSpec::default();
        let one = layout_balloons(&[balloon(Cell::new(3, 5), 6.0, &spec)], &spec).unwrap();
        assert_eq!(lifts(&one), vec![25.0]);

        let near = layout_balloons(
            &[balloon(Cell::new(3, 5), 6.0, &spec), balloon(Cell::new(4, 5), 6.0, &spec)],
            &spec,
        )
        .unwrap();
        assert_eq!(lifts(&near), vec![25.0, 37.0]);

        let far = layout_balloons(
            &[balloon(Cell::new(1, 1), 6.0, &spec), balloon(Cell::new(6, 15), 6.0, &spec)],
            &spec,
        )
        .unwrap();
        assert_eq!(lifts(&far), vec![25.0, 25.0]);
    }

    #[test]
    fn balloon_layout_chains() {
        let spec = FretboardSpec::default();
        let g: Vec<_> = (1..=4).map(|s| balloon(Cell::new(s, 5), 6.0, &spec)).collect();
        let out = layout_balloons(&g, &spec).unwrap();
        // neighbours 7.3 mm apart clash, strings two apart (14.6 mm) do not
        assert_eq!(lifts(&out), vec![25.0, 37.0, 25.0, 37.0]);
        let wide: Vec<_> = (1..=3).map(|s| balloon(Cell::new(s, 5), 8.0, &spec)).collect();
        assert_eq!(lifts(&layout_balloons(&wide, &spec).unwrap()), vec![25.0, 41.0, 57.0]);
        for (a, b) in g.iter().zip(&out) {
            let (GlyphKind::Balloon { leader_anchor: x, .. }, GlyphKind::Balloon { leader_anchor: y, .. }) = (a.kind, b.kind) else {
                panic!()
            };
            assert_eq!(x, y);
        }
    }

    #[test]
    fn arrange_examples() {
        let spec = FretboardSpec::<f64>::default();
        let one = vec![("a".to_string(), vec![])];
        let s = arrange(&one, &ArrangementMode::InPlace, &spec).unwrap();
        assert_eq!(s.boards[0].transform, RigidTransform::identity());

        let three: Vec<_> = ["a", "b", "c"].iter().map(|id| (id.to_string(), vec![])).collect();
        let order = vec!["a".to_string(), "b".into(), "c".into()];
        let s = arrange(&three, &ArrangementMode::Stacked { spacing_mm: 30.0, order }, &spec).unwrap();
        let ys: Vec<_> = s.boards.iter().map(|b| b.transform.translation[1]).collect();
        assert_eq!(ys[0], 0.0);
        assert!((ys[1] + 66.5).abs() < 1e-12);
        assert!((ys[2] + 133.0).abs() < 1e-12);

        let s = arrange(&one, &ArrangementMode::FlippedUp { angle_deg: 90.0 }, &spec).unwrap();
        let t = s.boards[0].transform;
        let p = t.apply([100.0, 7.0, 0.0]);
        assert!(p[0].abs() < 1e-12 && p[1] == 7.0 && p[2] > 99.999);
        assert!((t.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arrange_arity() {
        let spec = FretboardSpec::<f64>::default();
        let two: Vec<_> = ["a", "b"].iter().map(|id| (id.to_string(), vec![])).collect();
        assert!(matches!(
            arrange(&two, &ArrangementMode::InPlace, &spec),
            Err(FretboardError::ArityMismatch { expected: 1, got: 2 })
        ));
        let order = vec!["a".to_string(), "a".into()];
        assert!(matches!(
            arrange(&two, &ArrangementMode::Stacked { spacing_mm: 30.0, order }, &spec),
            Err(FretboardError::InvalidOrder(_))
        ));
        assert!(arrange(&two, &ArrangementMode::Stacked { spacing_mm: 30.0, order: vec![] }, &spec).is_err());
    }

    #[test]
    fn transform_inverse() {
        let t = RigidTransform { translation: [1.0, -2.0, 3.0], ..RigidTransform::<f64>::hinge_up(37.0) };
        let p = [4.0, 5.0, 6.0];
        let back = t.inverse().apply(t.apply(p));
        for i in 0..3 {
            assert!((back[i] - p[i]).abs() < 1e-12);
        }
    }
}
