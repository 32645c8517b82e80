//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All math is written against [`Scalar`] so the same code runs in `f64`
//! (the default everywhere, and what the training harness uses) or `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + Debug
    + Display
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, rounding to the target precision.
    fn cast(value: f64) -> Self;

    /// Widens to `f64` for reporting.
    fn to_f64_lossy(self) -> f64;

    /// Converts a count or index.
    fn from_count(value: usize) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn cast(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_count(value: usize) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn cast(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    #[inline]
    fn from_count(value: usize) -> Self {
        value as f64
    }
}
