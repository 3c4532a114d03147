//! Scalar abstraction used by every numeric module in this crate.
//!
//! All geometry, filtering and planning code is generic over [`Real`] so the
//! same routines run in `f32` (embedded replay, large batch sweeps) and `f64`
//! (the default used by the simulator and CLI). The trait is a thin bundle of
//! `num-traits` bounds plus serde support; it adds a single convenience
//! constructor, [`Real::of`], for writing literals in generic code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the library.
///
/// Implemented for `f32` and `f64`. The bound set is deliberately small:
/// `Float` for arithmetic and comparisons, `FloatConst` for π, `FromPrimitive`
/// for integer conversions, `NumAssign` for `+=`-style updates, `Sum` for
/// iterator folds, and serde traits so map/scenario/log types serialize for
/// any precision.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    ///
    /// Generic numeric code reads much better with `T::of(0.5)` than with
    /// `T::from_f64(0.5).unwrap()` scattered everywhere. The conversion is a
    /// plain `as` cast, so `f32` rounds to nearest.
    fn of(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

/// Clamps `v` into `[lo, hi]`. `Float::clamp` exists on the std types but not
/// on the trait, so generic code funnels through this helper.
#[inline]
pub fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    debug_assert!(lo <= hi);
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn of_round_trips_literals() {
        assert_eq!(f64::of(2.5), 2.5);
        assert_eq!(f32::of(2.5), 2.5f32);
    }

    #[test]
    fn clamp_bounds() {
        assert_eq!(clamp(5.0, 0.0, 1.0), 1.0);
        assert_eq!(clamp(-5.0, 0.0, 1.0), 0.0);
        assert_eq!(clamp(0.5, 0.0, 1.0), 0.5);
    }

    fn generic_mean<T: Real>(xs: &[T]) -> T {
        let n = T::from_usize(xs.len()).unwrap();
        xs.iter().copied().sum::<T>() / n
    }

    #[test]
    fn works_for_both_precisions() {
        assert!((generic_mean(&[1.0f32, 2.0, 3.0]) - 2.0).abs() < 1e-6);
        assert!((generic_mean(&[1.0f64, 2.0, 3.0]) - 2.0).abs() < 1e-12);
    }
}
