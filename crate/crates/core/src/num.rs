// SPDX-License-Identifier: Apache-2.0
//! Numeric traits for the real-valued and threshold parts of the crate.

use core::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, NumCast, Signed, ToPrimitive};

/// Floating-point type used by the closed-form calculators.
pub trait Real: Float + FromPrimitive + NumCast + Debug + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("literal fits")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Scalar type for threshold multipliers: floats, or exact rationals.
pub trait ThresholdScalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn ceil(&self) -> Self;

    fn from_count(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("u64 representable")
    }

    /// `ceil(self * n)` as an integer, saturating at zero.
    fn ceil_times(&self, n: u64) -> u64 {
        let prod = (*self * Self::from_count(n)).ceil();
        if prod <= Self::zero() {
            0
        } else {
            prod.to_u64().unwrap_or(u64::MAX)
        }
    }
}

impl ThresholdScalar for f32 {
    fn ceil(&self) -> Self {
        f32::ceil(*self)
    }
}

impl ThresholdScalar for f64 {
    fn ceil(&self) -> Self {
        f64::ceil(*self)
    }
}

impl<I> ThresholdScalar for Ratio<I>
where
    I: num_integer::Integer
        + Signed
        + Clone
        + Copy
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Send
        + Sync
        + 'static,
    Ratio<I>: FromPrimitive + ToPrimitive,
{
    fn ceil(&self) -> Self {
        Ratio::ceil(self)
    }
}
