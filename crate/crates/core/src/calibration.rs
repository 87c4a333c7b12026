//! Planar homographies from instrument-plane millimetres to device pixels.
//!
//! Estimation is the normalized direct linear transform: both point sets are
//! translated to their centroid and scaled to a mean distance of sqrt(2),
//! the stacked 2n x 9 system is reduced to its 9 x 9 normal matrix, and the
//! eigenvector of the smallest eigenvalue (cyclic Jacobi) is de-normalized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi::PadId;
use crate::scalar::Real;

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
/// Smallest |w| accepted before a point is treated as mapped to infinity.
const MIN_HOMOGENEOUS_W: f64 = 1e-12;
/// Ratio of the second-smallest to the largest eigenvalue below which the
/// null space is considered more than one-dimensional.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("at least one correspondence is required")]
    NonEmptyRequired,
    #[error("invalid pad layout for {pad:?}: {reason}")]
    InvalidLayout { pad: PadId, reason: &'static str },
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence<T> {
    /// Instrument-plane millimetres.
    pub world: (T, T),
    /// Device pixels.
    pub pixel: (T, T),
}

pub type Mat3<T> = [[T; 3]; 3];

fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Nonsingular projective map, normalized so `m[2][2] == 1` when that entry
/// is nonzero and to unit Frobenius norm otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 9]", into = "[T; 9]", bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Homography<T> {
    m: Mat3<T>,
}

impl<T: Real> TryFrom<[T; 9]> for Homography<T> {
    type Error = CalibrationError;

    fn try_from(v: [T; 9]) -> Result<Self, CalibrationError> {
        Self::new(std::array::from_fn(|i| std::array::from_fn(|j| v[3 * i + j])))
    }
}

impl<T: Real> From<Homography<T>> for [T; 9] {
    fn from(h: Homography<T>) -> Self {
        std::array::from_fn(|k| h.m[k / 3][k % 3])
    }
}

impl<T: Real> Homography<T> {
    pub fn new(m: Mat3<T>) -> Result<Self, CalibrationError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CalibrationError::NonFinite);
        }
        let frob = m.iter().flatten().fold(T::zero(), |acc, v| acc + *v * *v).sqrt();
        if frob == T::zero() {
            return Err(CalibrationError::DegenerateConfiguration("zero matrix"));
        }
        let row_norms = m
            .iter()
            .fold(T::one(), |acc, r| acc * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt());
        // Hadamard ratio: 1 for orthogonal rows, 0 when singular
        if !(det3(&m).abs() > T::epsilon() * row_norms) {
            return Err(CalibrationError::DegenerateConfiguration("singular matrix"));
        }
        let norm = if m[2][2].abs() > T::tolerance(1e-12) * frob {
            m[2][2]
        } else {
            frob
        };
        Ok(Self {
            m: m.map(|row| row.map(|v| v / norm)),
        })
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn translation(dx: T, dy: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, dx], [z, o, dy], [z, z, o]],
        }
    }

    pub fn matrix(&self) -> &Mat3<T> {
        &self.m
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [T; 9] {
        (*self).into()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self, CalibrationError> {
        Self::new(mat_mul(&self.m, &other.m))
    }

    pub fn apply(&self, point: (T, T)) -> Result<(T, T), CalibrationError> {
        let (x, y) = point;
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if !(w.abs() > T::lit(MIN_HOMOGENEOUS_W)) {
            return Err(CalibrationError::PointAtInfinity);
        }
        let u = (m[0][0] * x + m[0][1] * y + m[0][2]) / w;
        let v = (m[1][0] * x + m[1][1] * y + m[1][2]) / w;
        Ok((u, v))
    }

    /// Pixels per millimetre around `point`, averaged over both axes.
    pub fn local_scale(&self, point: (T, T)) -> Result<T, CalibrationError> {
        let p = self.apply(point)?;
        let px = self.apply((point.0 + T::one(), point.1))?;
        let py = self.apply((point.0, point.1 + T::one()))?;
        let dx = ((px.0 - p.0).powi(2) + (px.1 - p.1).powi(2)).sqrt();
        let dy = ((py.0 - p.0).powi(2) + (py.1 - p.1).powi(2)).sqrt();
        Ok((dx + dy) / T::lit(2.0))
    }
}

/// Free-function form of [`Homography::apply`].
pub fn apply<T: Real>(h: &Homography<T>, point: (T, T)) -> Result<(T, T), CalibrationError> {
    h.apply(point)
}

/// Similarity taking points to zero centroid and mean distance sqrt(2).
fn normalizer<T: Real>(points: &[(T, T)]) -> Result<Mat3<T>, CalibrationError> {
    let n = T::lit(points.len() as f64);
    let cx = points.iter().fold(T::zero(), |a, p| a + p.0) / n;
    let cy = points.iter().fold(T::zero(), |a, p| a + p.1) / n;
    let mean = points
        .iter()
        .fold(T::zero(), |a, p| a + ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        / n;
    if !(mean > T::zero()) || !mean.is_finite() {
        return Err(CalibrationError::DegenerateConfiguration("coincident points"));
    }
    let s = T::lit(2.0).sqrt() / mean;
    let (o, z) = (T::one(), T::zero());
    Ok([[s, z, -s * cx], [z, s, -s * cy], [z, z, o]])
}

fn inverse_normalizer<T: Real>(t: &Mat3<T>) -> Mat3<T> {
    let s = t[0][0];
    let (o, z) = (T::one(), T::zero());
    // t = [[s,0,-s cx],[0,s,-s cy],[0,0,1]]
    [[o / s, z, -t[0][2] / s], [z, o / s, -t[1][2] / s], [z, z, o]]
}

fn transform<T: Real>(t: &Mat3<T>, p: (T, T)) -> (T, T) {
    (t[0][0] * p.0 + t[0][2], t[1][1] * p.1 + t[1][2])
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors as columns of the second value.
pub fn symmetric_eigen<T: Real, const N: usize>(mut a: [[T; N]; N]) -> ([T; N], [[T; N]; N]) {
    let mut v: [[T; N]; N] = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { T::one() } else { T::zero() }));
    let tol = T::tolerance(JACOBI_TOLERANCE);
    let total = a.iter().flatten().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..N {
            for j in (i + 1)..N {
                off = off + a[i][j] * a[i][j];
            }
        }
        if off.sqrt() <= tol * total {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    (std::array::from_fn(|i| a[i][i]), v)
}

/// Normalized DLT estimate from four or more correspondences.
pub fn estimate_homography<T: Real>(points: &[Correspondence<T>]) -> Result<Homography<T>, CalibrationError> {
    if points.len() < 4 {
        return Err(CalibrationError::TooFewPoints(points.len()));
    }
    if points
        .iter()
        .any(|c| ![c.world.0, c.world.1, c.pixel.0, c.pixel.1].iter().all(|v| v.is_finite()))
    {
        return Err(CalibrationError::NonFinite);
    }
    let world: Vec<_> = points.iter().map(|c| c.world).collect();
    let pixel: Vec<_> = points.iter().map(|c| c.pixel).collect();
    let tw = normalizer(&world)?;
    let tp = normalizer(&pixel)?;

    let mut ata = [[T::zero(); 9]; 9];
    let mut accumulate = |row: [T; 9]| {
        for i in 0..9 {
            for j in i..9 {
                ata[i][j] = ata[i][j] + row[i] * row[j];
            }
        }
    };
    for (w, p) in world.iter().zip(&pixel) {
        let (x, y) = transform(&tw, *w);
        let (u, v) = transform(&tp, *p);
        let (o, z) = (T::one(), T::zero());
        accumulate([-x, -y, -o, z, z, z, u * x, u * y, u]);
        accumulate([z, z, z, -x, -y, -o, v * x, v * y, v]);
    }
    for i in 0..9 {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
    }

    let (values, vectors) = symmetric_eigen(ata);
    let mut order: [usize; 9] = std::array::from_fn(|i| i);
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let largest = values[order[8]].abs();
    if !(values[order[1]].abs() > T::tolerance(RANK_TOLERANCE) * largest) {
        return Err(CalibrationError::DegenerateConfiguration("rank-deficient system"));
    }
    let h = order[0];
    let hn: Mat3<T> = std::array::from_fn(|i| std::array::from_fn(|j| vectors[3 * i + j][h]));
    let m = mat_mul(&mat_mul(&inverse_normalizer(&tp), &hn), &tw);
    Homography::new(m)
}

/// RMS and maximum pixel distance between mapped world points and their
/// pixel targets.
pub fn reprojection_error<T: Real>(h: &Homography<T>, points: &[Correspondence<T>]) -> Result<(T, T), CalibrationError> {
    if points.is_empty() {
        return Err(CalibrationError::NonEmptyRequired);
    }
    let mut sum_sq = T::zero();
    let mut max = T::zero();
    for c in points {
        let (u, v) = h.apply(c.world)?;
        let e2 = (u - c.pixel.0).powi(2) + (v - c.pixel.1).powi(2);
        sum_sq = sum_sq + e2;
        max = max.max(e2.sqrt());
    }
    Ok(((sum_sq / T::lit(points.len() as f64)).sqrt(), max))
}

/// Convex pad outlines on the instrument plane, in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<PadId, Vec<(T, T)>>", into = "BTreeMap<PadId, Vec<(T, T)>>")]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct PadLayout<T> {
    pads: BTreeMap<PadId, Vec<(T, T)>>,
}

impl<T: Real> TryFrom<BTreeMap<PadId, Vec<(T, T)>>> for PadLayout<T> {
    type Error = CalibrationError;

    fn try_from(pads: BTreeMap<PadId, Vec<(T, T)>>) -> Result<Self, CalibrationError> {
        Self::new(pads)
    }
}

impl<T: Real> From<PadLayout<T>> for BTreeMap<PadId, Vec<(T, T)>> {
    fn from(l: PadLayout<T>) -> Self {
        l.pads
    }
}

fn is_convex_simple<T: Real>(poly: &[(T, T)]) -> bool {
    let n = poly.len();
    let mut sign = 0i8;
    let mut winding = T::zero();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        let s = if cross > T::zero() {
            1
        } else if cross < T::zero() {
            -1
        } else {
            0
        };
        if s != 0 {
            if sign != 0 && s != sign {
                return false;
            }
            sign = s;
        }
        let ea = (b.1 - a.1).atan2(b.0 - a.0);
        let eb = (c.1 - b.1).atan2(c.0 - b.0);
        let mut turn = eb - ea;
        let pi = T::lit(std::f64::consts::PI);
        while turn > pi {
            turn = turn - pi - pi;
        }
        while turn < -pi {
            turn = turn + pi + pi;
        }
        winding = winding + turn;
    }
    // a convex simple polygon turns exactly once
    sign != 0 && (winding.abs() - T::lit(2.0 * std::f64::consts::PI)).abs() < T::lit(1e-3)
}

impl<T: Real> PadLayout<T> {
    pub fn new(pads: BTreeMap<PadId, Vec<(T, T)>>) -> Result<Self, CalibrationError> {
        for (pad, poly) in &pads {
            if poly.len() < 3 {
                return Err(CalibrationError::InvalidLayout { pad: *pad, reason: "fewer than 3 vertices" });
            }
            if poly.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                return Err(CalibrationError::NonFinite);
            }
            if !is_convex_simple(poly) {
                return Err(CalibrationError::InvalidLayout { pad: *pad, reason: "polygon is not convex and simple" });
            }
        }
        Ok(Self { pads })
    }

    /// Octagonal pads roughly where a compact eight-pad kit puts them, seen
    /// from above (mm, origin at the kick pedal).
    pub fn compact_kit() -> Self {
        let place = |cx: f64, cy: f64, r: f64| {
            (0..8)
                .map(|k| {
                    let a = std::f64::consts::PI / 8.0 + k as f64 * std::f64::consts::PI / 4.0;
                    (T::lit(cx + r * a.cos()), T::lit(cy + r * a.sin()))
                })
                .collect::<Vec<_>>()
        };
        let pads = [
            (PadId::Kick, place(0.0, 0.0, 90.0)),
            (PadId::Snare, place(-260.0, 250.0, 110.0)),
            (PadId::Hihat, place(-520.0, 380.0, 120.0)),
            (PadId::Tom1, place(-130.0, 480.0, 95.0)),
            (PadId::Tom2, place(130.0, 480.0, 95.0)),
            (PadId::Tom3, place(280.0, 250.0, 110.0)),
            (PadId::Crash, place(-380.0, 650.0, 130.0)),
            (PadId::Ride, place(480.0, 520.0, 140.0)),
        ];
        Self::new(pads.into_iter().collect()).expect("built-in layout is valid")
    }

    pub fn pads(&self) -> &BTreeMap<PadId, Vec<(T, T)>> {
        &self.pads
    }

    pub fn polygon(&self, pad: PadId) -> Option<&[(T, T)]> {
        self.pads.get(&pad).map(Vec::as_slice)
    }
}

/// Maps every pad outline into pixels, preserving vertex order.
pub fn map_pads<T: Real>(
    layout: &PadLayout<T>,
    h: &Homography<T>,
) -> Result<BTreeMap<PadId, Vec<(T, T)>>, CalibrationError> {
    layout
        .pads
        .iter()
        .map(|(pad, poly)| {
            let mapped = poly.iter().map(|p| h.apply(*p)).collect::<Result<Vec<_>, _>>()?;
            Ok((*pad, mapped))
        })
        .collect()
}

/// Persisted calibration for one surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct CalibrationFile<T> {
    pub correspondences: Vec<Correspondence<T>>,
    /// Row-major 3x3 matrix.
    pub matrix: Homography<T>,
    pub rms: T,
    pub max: T,
}

impl<T: Real> CalibrationFile<T> {
    pub fn from_correspondences(correspondences: Vec<Correspondence<T>>) -> Result<Self, CalibrationError> {
        let matrix = estimate_homography(&correspondences)?;
        let (rms, max) = reprojection_error(&matrix, &correspondences)?;
        Ok(Self {
            correspondences,
            matrix,
            rms,
            max,
        })
    }
}
