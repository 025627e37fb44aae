//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
///
/// All filter-design math is written against this trait. Spectra and
/// reported metrics are always computed in `f64`.
pub trait Real:
    RealField + Copy + Debug + Display + LowerExp + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Gram-matrix condition number above which a system is treated as
    /// numerically singular.
    const MAX_CONDITION: f64;

    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float converts to f64")
    }
}

impl Real for f64 {
    const MAX_CONDITION: f64 = 1e12;
}

impl Real for f32 {
    const MAX_CONDITION: f64 = 1e5;
}
