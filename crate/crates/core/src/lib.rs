//! Black-box stochastic variational inference with second-order updates.
//!
//! The crate maximizes the evidence lower bound of a factorized variational
//! approximation using score-function (log-derivative) Monte Carlo estimates
//! of the gradient and Hessian. The Hessian estimate has diagonal-plus-low-rank
//! structure, which the solvers exploit three ways:
//!
//! * a Sherman–Morrison cascade that inverts the damped curvature in
//!   `O(S d^2)` instead of `O(d^3)`,
//! * a matrix-free conjugate gradient solve at `O(S d)` per product,
//! * a stochastic Neumann-series iteration that applies the inverse
//!   curvature from a stream of per-sample Hessian draws in `O(d)` per step.
//!
//! A plain first-order ascent baseline and a dense Newton reference share the
//! same step control and convergence machinery, so the schemes can be
//! benchmarked head to head on models with known posteriors.
//!
//! The crate is `no_std`-compatible (`alloc` required); disable the default
//! `std` feature for embedded use. All transcendentals route through `libm`
//! in either mode, so results are bit-identical across the two builds.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod error;
mod math;

pub mod estimators;
pub mod family;
pub mod fdiff;
pub mod la;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
