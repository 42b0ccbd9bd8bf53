//! Floating-point abstraction shared by the model math.
//!
//! Everything that touches model parameters (weights, training, aggregation,
//! scoring) is written against [`Scalar`], so the same code runs on `f64`
//! (the canonical wire precision) and `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless widening to the wire format.
    fn to_wire(self) -> f64;

    /// Narrowing from the wire format. Exact for values produced by `to_wire`.
    fn from_wire(v: f64) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_wire(v)
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_wire(self) -> f64 {
        self
    }
    #[inline]
    fn from_wire(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    #[inline]
    fn to_wire(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_wire(v: f64) -> Self {
        v as f32
    }
}

/// Sign with `sign(0) == 0`, unlike `Float::signum`.
#[inline]
pub fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
