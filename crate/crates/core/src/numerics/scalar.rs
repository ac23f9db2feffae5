use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for the dense linear algebra and the moment
/// algebra built on top of it.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Relative pivot tolerance used by the Cholesky factorisation.
    const PIVOT_TOLERANCE: Self;
    /// Absolute off-diagonal threshold at which a Jacobi sweep counts as converged.
    const JACOBI_TOLERANCE: Self;

    /// Lossy conversion from `f64` literals.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const PIVOT_TOLERANCE: Self = 1e-12;
    const JACOBI_TOLERANCE: Self = 1e-15;
}

impl Scalar for f32 {
    const PIVOT_TOLERANCE: Self = 1e-6;
    const JACOBI_TOLERANCE: Self = 1e-7;
}
