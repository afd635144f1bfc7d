//! Scalar abstraction for the math core.
//!
//! The tape, tensors, and the assignment solver are generic over the element
//! type; the rest of the pipeline uses the `f64` aliases exported from the
//! crate root (gradient checks against central differences need the 64-bit
//! headroom).

use std::fmt::{Debug, Display};

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::FloatConst
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("f64 conversion")
    }
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
    fn of_usize(v: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(v).expect("usize conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
