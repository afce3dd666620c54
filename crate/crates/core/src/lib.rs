//! Bayesian nonparametric estimation of principal causal effects for
//! two-stage sequentially randomised trials with partial compliance.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks, and
// index loops mirror the indexed formulas of the mixture kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augmentation;
pub mod cli;
pub mod copula;
pub mod data;
pub mod engine;
pub mod error;
pub mod marginals;
pub mod outcome;
pub mod replicate;
pub mod response;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};
