//! Fair classification by linear post-processing.
//!
//! A pretrained score function is turned into a classifier that satisfies
//! group fairness (statistical parity, equal opportunity, equalized odds,
//! or any custom collection of parity constraints) by solving a linear
//! program over the post-processing sample and offsetting the pointwise
//! risk with a "fairness risk" `sum_k g(x, k) w(y, k)`.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`types`] and [`classifier`]: shared domain types and the prediction rule.
//! - [`criteria`]: encodings of the usual fairness criteria and group-score recipes.
//! - [`lp`]: the fairness linear programs and the simplex solvers behind them.
//! - [`postprocess`]: the end-to-end fitting routine and parameter files.
//! - [`models`], [`calibrate`], [`data`]: plugin predictors, calibration and ingestion.
//! - [`eval`]: risk, fairness violation and tradeoff sweeps.
//! - [`oracle`]: brute-force verifiers used by the test suite.

pub mod calibrate;
pub mod classifier;
mod codec;
pub mod criteria;
pub mod data;
pub mod error;
pub mod eval;
pub mod lp;
pub mod models;
pub mod oracle;
pub mod postprocess;
pub mod types;

pub use classifier::{fairness_risk, perturb, RandomizedClassifier};
pub use error::{Error, Result};
pub use types::{Constraint, FairnessSpec, Label, NoiseSpec, PostprocessParams, ScoreBundle};

/// Primal and dual feasibility tolerance shared by the solvers and checks.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Tolerance on the primal/dual objective gap.
pub const DUALITY_GAP_TOL: f64 = 1e-7;
/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-10;
