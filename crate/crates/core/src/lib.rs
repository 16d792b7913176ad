//! Reverse Jensen inequalities and the mutual information estimators built
//! on them.
//!
//! - [`inequality`]: bound evaluators over empirical distributions.
//! - [`gaussian`]: correlated Gaussian benchmark with known mutual information.
//! - [`critic`]: relu scoring network with analytic gradients and Adam.
//! - [`estimators`]: MINE, NWJ, SMILE and the two reverse Jensen estimators,
//!   plus the training loop.
//! - [`harness`]: experiment configuration, summaries, CSV output and the
//!   oracle-critic validation suite used by the `bench` CLI.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod estimators;
pub mod gaussian;
pub mod harness;
pub mod inequality;
