//! Floating point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Gathers the traits needed to run the simulations over `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Number of bits a coordinate occupies inside a [`crate::optimizer::MemoryState`].
    const STATE_BITS: usize = 64;

    /// Slack allowed on `‖x‖₂ ≤ 1` for accumulated rounding.
    fn ball_tolerance() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    fn ball_tolerance() -> Self {
        4.0 * f32::EPSILON
    }
}

impl Scalar for f64 {
    fn ball_tolerance() -> Self {
        1e-12
    }
}
