//! Scalar abstraction shared by every numeric module.
//!
//! All matrix and bound code is written against [`Scalar`], so the same
//! formulas run in `f64` (the default used by the CLI and the acceptance
//! suite) or `f32` for cheap exploratory sweeps.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real field usable by the simulation and theory code.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for non-representable values,
    /// which cannot happen for the IEEE types this is implemented for.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn epsilon() -> Self;

    fn is_finite_value(self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn epsilon() -> Self {
        f64::EPSILON
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    #[inline]
    fn epsilon() -> Self {
        f32::EPSILON
    }
    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
