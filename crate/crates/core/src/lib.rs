//! Hands-off covariance steering.
//!
//! Steers the state covariance of a discrete-time linear Gaussian system to a
//! terminal bound while driving as many feedback gains as possible to exactly
//! zero. The core is a semidefinite program in `(Σ_k, U_k, Y_k)`; sparsity comes
//! from an iteratively reweighted group-norm penalty on the `Y_k`, and a
//! brute-force mask enumeration serves as an exact ℓ0 reference.

pub mod dynamics;
pub mod export;
pub mod irl1p;
pub mod linalg;
pub mod model;
pub mod sdp;
pub mod sparsity;
pub mod stats;

pub use model::{validate, ProblemInstance, ValidatedProblem};
pub use sdp::{SdpSolution, SolveStatus};
