//! Learned per-iteration preconditioning for gradient descent.
//!
//! The update `x_{t+1} = x_t - G_{θ_t} ∇f(x_t)` replaces the scalar step size of
//! gradient descent with a matrix `G_θ` whose parameters are learned from a dataset
//! of convex objectives. Because `G_θ ∇f(x)` is affine in `θ`, choosing the
//! parameters greedily (one iteration at a time, minimizing the mean objective
//! value after a single step) is a convex problem, so training never gets stuck in
//! spurious local minima and the resulting method provably converges on the
//! training set when a safeguard step is enforced.
//!
//! Modules:
//! - [`linalg`]: dense/ structured primitives (pseudoinverse solves, Kronecker and
//!   Hadamard products, zero-padded convolution, power iteration).
//! - [`objectives`]: objective abstraction, least-squares problems and the
//!   Huber-regularised total-variation deblurring objective with a Gaussian blur
//!   forward operator.
//! - [`preconditioners`]: the four parametrisations (scalar, diagonal, full
//!   matrix, convolution) as affine maps, their adjoints and smoothness constants.
//! - [`closed_form`]: exact minimizers of the greedy subproblem when every
//!   objective is least-squares.
//! - [`trainer`]: the safeguarded greedy training loop and its convergence
//!   diagnostics.
//! - [`deploy`]: applying learned schedules to new objectives, classical
//!   baselines, and the schedule file format.

pub mod closed_form;
pub mod deploy;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod preconditioners;
pub mod trainer;

pub use error::{Error, Result};
