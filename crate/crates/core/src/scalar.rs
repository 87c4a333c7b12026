//! Scalar abstraction for the geometric parts of the engine.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar used by fretboard geometry, glyph layout and homographies.
///
/// Implemented for `f32` and `f64`. Tolerances that the numerics rely on are
/// derived from [`Real::tolerance`] so that single precision does not chase
/// double-precision targets.
pub trait Real:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a literal, panicking only for values the type cannot hold.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Convergence threshold for iterative routines: `max(target, 4 eps)`.
    #[inline]
    fn tolerance(target: f64) -> Self {
        Self::lit(target).max(Self::epsilon() * Self::lit(4.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}
