//! Scalar abstraction for the numeric core.
//!
//! Everything below the harness is generic over this trait so the same kernels
//! run in `f32` or `f64`. Randomness is always drawn in `f64` and converted,
//! which keeps sample streams identical across scalar types.

use std::fmt::{Debug, Display};

/// Floating-point scalar usable by the numeric core.
pub trait Float:
    num_traits::Float + num_traits::NumAssign + Copy + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Float for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Float for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}
