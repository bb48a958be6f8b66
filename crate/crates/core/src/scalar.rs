//! Floating-point scalar abstraction.
//!
//! The numeric kernels (dynamics, cost, solver) are generic over [`Scalar`]
//! so they can run at `f32` or `f64`. Everything downstream of the dataset
//! format (training, sampling, evaluation) is pinned to [`Real`] = `f64`.

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Widen to `f64` for reporting.
    #[inline]
    fn to_real(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Concrete scalar used by the pipeline (datasets, training, evaluation).
pub type Real = f64;
