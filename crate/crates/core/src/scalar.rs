//! Scalar abstraction shared by the numeric primitives.
//!
//! Kernels, the quasi-Newton minimizer, the QP solver and the ranking metrics
//! are written against [`Real`] so they run on `f32` as well as `f64`. The
//! pipeline types (datasets, transfer models, predictors) fix `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable with nalgebra decompositions.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal. Lossy for narrower types.
    #[inline]
    fn lit(v: f64) -> Self {
        nalgebra::convert(v)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.to_f64_lossy().is_finite()
    }

    #[inline]
    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }
}

impl Real for f32 {}
impl Real for f64 {}
