//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point scalar: implemented for `f32` and `f64`.
///
/// Transcendental functions come from [`nalgebra::ComplexField`] (via
/// `RealField`), so `x.sin()`, `x.cosh()`, `x.ln()` work on any `T: Real`.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + FloatConst
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts an integer into the working scalar type.
#[inline]
pub fn from_i64<T: Real>(k: i64) -> T {
    T::from_i64(k).expect("integer representable in scalar type")
}

#[inline]
pub fn from_usize<T: Real>(k: usize) -> T {
    T::from_usize(k).expect("integer representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
