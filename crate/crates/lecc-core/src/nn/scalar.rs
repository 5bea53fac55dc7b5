//! Floating-point abstraction so the whole network runs in f32 for training
//! and f64 for finite-difference gradient verification.

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64_lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal must be representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for converting an f64 literal into the active scalar type.
#[inline]
pub fn sc<F: Scalar>(x: f64) -> F {
    F::from_f64_lit(x)
}
