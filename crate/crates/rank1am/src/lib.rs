//! Sample-split alternating minimization for rank-one matrix sensing,
//! together with the deterministic two-dimensional state evolution that
//! predicts its trajectory and Monte Carlo checks of the random-matrix
//! facts behind it.
//!
//! Observations follow `y_i = psi(<x_i, mu*> <z_i, nu*>) + eps_i` with
//! Gaussian sensing vectors. Each half-step of AM draws a fresh batch and
//! solves a weighted least-squares problem; the estimate is summarized by
//! `(alpha, beta)`, its component along the truth and the norm of the rest.

pub mod am;
pub mod constants;
pub mod error;
pub mod harness;
pub mod predictor;
pub mod quad;
pub mod rmt;
pub mod sampler;

pub use error::{Error, Result};
