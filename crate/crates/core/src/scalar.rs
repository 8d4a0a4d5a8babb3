//! Floating-point abstraction: every numeric routine in this crate is generic
//! over [`Real`], instantiated as `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

/// Scalar type for distributions, factor matrices and metric values.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Sum
    + FromStr
    + Default
    + Debug
    + Display
    + serde::Serialize
    + Send
    + Sync
    + 'static
{
    /// Draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless for `f64`, rounded for `f32`.
    fn from_f64_lossy(v: f64) -> Self;
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// `n as F` without the cast noise at call sites.
pub fn from_usize<F: Real>(n: usize) -> F {
    F::from_usize(n).expect("count representable as scalar")
}
