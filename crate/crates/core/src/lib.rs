//! Fair boosting by KL projection.
//!
//! Each round computes AdaBoost's exponential-weights distribution `q`,
//! projects it onto a polytope of "fair" distributions, trains a decision
//! stump on the projection `w`, and sets the stump's coefficient from its
//! error under `q`. The exponential loss keeps the AdaBoost recursion; the
//! price of fairness shows up as `δ = sqrt(KL(w || q) / 2)`, the most the
//! stump's edge can drop between `w` and `q`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boosting;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod projection;
pub mod weak_learner;

pub use error::{Error, Result};
