//! Explicit geometric convergence-rate bounds for Markov chains in
//! L1-Wasserstein distance.
//!
//! Two families of bounds are provided:
//!
//! * [`rate`]: closed-form rates from constant-parameter drift and
//!   contraction conditions, a continuous-time wrapper, and the comparison
//!   against the Durmus–Moulines rate.
//! * [`generalized`]: rates built from drift and contraction conditions whose
//!   parameters vary over the product state space, evaluated as a supremum
//!   over a compact search domain.
//!
//! [`nar`] carries the worked example (a sine-perturbed autoregressive
//! chain) and [`coupling`] checks the bounds by Monte Carlo simulation of
//! the synchronously coupled chain.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod generalized;
pub mod nar;
pub mod rate;

pub use error::{Error, Result};
