//! Scalar abstraction for probabilities.
//!
//! Everything probabilistic in the crate is generic over [`Probability`], which is
//! implemented for `f32` and `f64`. The tolerances used to validate distributions
//! scale with the precision of the type.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for f64 {}
}

/// A real scalar usable as a probability.
pub trait Probability:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Debug
    + Display
    + Default
    + Sum<Self>
    + Send
    + Sync
    + 'static
    + sealed::Sealed
{
    /// Maximum allowed `|sum(probs) - 1|` for a valid distribution.
    fn normalization_tolerance() -> Self;

    /// Residual mass below which the residual distribution falls back to `q`.
    fn residual_floor() -> Self;

    /// Lossless conversion from an `f64` constant (rounded for `f32`).
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("probability representable as f64")
    }
}

impl Probability for f64 {
    #[inline]
    fn normalization_tolerance() -> Self {
        1e-9
    }

    #[inline]
    fn residual_floor() -> Self {
        1e-12
    }
}

impl Probability for f32 {
    #[inline]
    fn normalization_tolerance() -> Self {
        1e-5
    }

    #[inline]
    fn residual_floor() -> Self {
        1e-6
    }
}
