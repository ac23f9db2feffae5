//! Power analysis and sample-size planning for linear regressions whose
//! regressors are collected under a planned missing (matrix sampling)
//! design.
//!
//! The numerical core is generic over the floating-point type; the aliases
//! below fix it to `f64`, which is what the estimators and simulation
//! harness use.

pub mod asymptotics;
pub mod data;
pub mod design;
pub mod estimators;
pub mod experiments;
pub mod moments;
pub mod numerics;
pub mod power;

pub use data::{DataError, Dataset};
pub use design::{Design, DesignError, Form};
pub use numerics::{NumericsError, RngStream, Scalar};

pub type Matrix64 = numerics::Matrix<f64>;
pub type SymMatrix64 = numerics::SymMatrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type SymMatrix32 = numerics::SymMatrix<f32>;
pub type MomentStructure64 = moments::MomentStructure<f64>;
pub type RegressionModel64 = moments::RegressionModel<f64>;
pub type AsymptoticReport64 = asymptotics::AsymptoticReport<f64>;
