//! Floating-point abstraction so the same kernels run in f32 (training)
//! and f64 (gradient checking, oracles).

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;

pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Sum + Send + Sync + Debug + Default + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
