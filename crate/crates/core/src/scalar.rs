//! Floating point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Real scalar the library computes in: `f32` or `f64`.
///
/// Tolerances throughout the crate are expressed as `f64` literals and
/// converted with [`Scalar::lit`]; several of them (1e-10 and below) are
/// below `f32` resolution, so `f64` is the precision the acceptance
/// thresholds are calibrated for.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
