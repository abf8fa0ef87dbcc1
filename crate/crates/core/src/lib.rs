//! Adaptive forward stepwise (AFS) regression.
//!
//! AFS moves the coefficient vector a fraction `rho` of the way towards the
//! OLS fit on the current active set at every step. `rho = 1` is forward
//! stepwise; as `rho -> 0` the path approaches least angle regression.
//!
//! The crate also ships the reference solvers used to check that behaviour
//! (coordinate-descent LASSO, exact LAR, componentwise L2 boosting), a
//! logistic variant, cross-validation, bootstrap degrees of freedom,
//! selective inference for the selection path, and a simulation harness.

pub mod afs;
pub mod boost;
pub mod cv;
pub mod dataset;
pub mod dof;
pub mod error;
pub mod export;
pub mod inference;
pub mod lar;
pub mod lasso;
pub mod linalg;
pub mod logistic;
pub mod models;
pub mod recover;
pub mod sim;

#[cfg(test)]
mod testutil;

pub use afs::{afs_fit, AfsConfig, AfsPath, AfsStep, L1Cap, StopReason, TieBreak};
pub use error::{Error, Result};
pub use linalg::{standardize, GramState, StandardizeOptions, StandardizedDesign};
