//! Simulation and statistical verification of conditioned Markov walks driven
//! by products of strictly positive random matrices.
//!
//! The walk is `(X_n, a + ln|g_n ⋯ g_1 x|)` on the simplex times the line,
//! killed at the first time the level is nonpositive. The crate provides
//!
//! * [`matrix`]: norms, actions, cocycle increments, comparison constants;
//! * [`ensemble`]: matrix laws, centering calibration, assumption audits;
//! * [`walk`] and [`exact`]: batch simulation and exhaustive enumeration;
//! * [`estimators`]: Lyapunov exponent, variance, invariant measure, survival,
//!   harmonic functions and conditioned local probabilities;
//! * [`harness`]: limit-theorem experiments with pass/fail verdicts;
//! * [`stats`]: KS tests, log-log regression, quadrature;
//! * [`runner`]: config-driven orchestration behind the `rmwalk` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod harness;
pub mod matrix;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
