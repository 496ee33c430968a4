use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the whole engine is generic over.
///
/// Implemented for `f32` and `f64`. The tolerances are per-type because the
/// sphere-membership guarantees that hold in binary64 are out of reach in
/// binary32.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Accepted deviation of `‖x‖` from 1 for points handed to sphere operations.
    fn sphere_tolerance() -> Self;
    /// Below this norm a spherical retraction is considered degenerate.
    fn retraction_floor() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize(n: usize) -> Self {
        Self::from(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    #[inline]
    fn sphere_tolerance() -> Self {
        1e-9
    }
    #[inline]
    fn retraction_floor() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    #[inline]
    fn sphere_tolerance() -> Self {
        1e-5
    }
    #[inline]
    fn retraction_floor() -> Self {
        1e-6
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist_sq<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}
