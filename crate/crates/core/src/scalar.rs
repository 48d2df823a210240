//! Scalar abstraction for the numeric kernels.
//!
//! Everything that is plain floating-point math (DSP, network layers,
//! feature formulas) is written against [`Scalar`] so it can run in `f32`
//! for production weights and in `f64` wherever tests compare against
//! oracles or finite differences.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable in every numeric kernel of this crate.
///
/// Implemented automatically for any type satisfying the bounds; in
/// practice that is `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Copy + Send + Sync + Debug + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    /// Widen to `f64` for accumulation and reporting.
    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum
        + Copy
        + Send
        + Sync
        + Debug
        + 'static
{
}
