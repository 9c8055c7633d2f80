//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for features, parameters and probabilities: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
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
    /// Lossy conversion from `f64`; exact for `f64` itself.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 converts to every Scalar")
    }

    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Probability clamp applied before logarithms.
    fn prob_epsilon() -> Self;
}

impl Scalar for f64 {
    fn prob_epsilon() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    // 1e-12 rounds to 1.0 in `1 - eps` for f32; use the smallest step that survives.
    fn prob_epsilon() -> Self {
        1e-7
    }
}
