//! Scalar abstraction shared by the numerical core.
//!
//! Model fitting, spline bases, the estimators and the exact-enumeration
//! oracle are written against [`Real`] so they run in `f32` or `f64`.
//! Simulation and I/O code is concrete in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Inverse logit, `1 / (1 + exp(-x))`, stable for large |x|.
#[inline]
pub fn expit<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_roundtrip() {
        for &x in &[-30.0f64, -3.0, -0.1, 0.0, 0.7, 12.0] {
            assert!((logit(expit(x)) - x).abs() < 1e-9 * (1.0 + x.abs()));
        }
        assert_eq!(expit(0.0f64), 0.5);
        assert!(expit(-800.0f64) >= 0.0);
        assert!(expit(800.0f64) <= 1.0);
    }

    #[test]
    fn works_in_f32() {
        let p: f32 = expit(1.0);
        assert!((p - 0.731_058_6).abs() < 1e-6);
    }
}
