//! Dense symmetric linear algebra, special functions and seeded random
//! streams shared by the rest of the crate.

mod linalg;
mod matrix;
mod rng;
mod scalar;
pub mod special;

pub use linalg::{chol, spd_inverse, sym_eigen, Cholesky, SymEigen};
pub use matrix::{Matrix, SymMatrix};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use special::{
    chisq_cdf, chisq_quantile, noncentral_chisq_cdf, normal_cdf, normal_quantile, t_cdf, t_quantile,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive definite (pivot {pivot} below tolerance)")]
    NotPositiveDefinite { pivot: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("Jacobi eigendecomposition did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("argument outside the function domain: {0}")]
    Domain(String),
}
