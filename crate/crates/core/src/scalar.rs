use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type for matrices, model parameters and gradients.
///
/// Implemented for `f32` and `f64`. The simulator itself runs in `f64`; `f32`
/// is supported for experimentation with lower precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or statistic.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Exact-or-floating probability arithmetic used by the allocation routines.
///
/// `f64` satisfies it, and so does `num_rational::Ratio<i64>`, which lets the
/// closed-form allocation priors be checked exactly.
pub trait ProbScalar:
    num_traits::Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug
{
}

impl<T> ProbScalar for T where
    T: num_traits::Num + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug
{
}
