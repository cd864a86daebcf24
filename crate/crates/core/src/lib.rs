//! Component-wise L2-Boosting for additive models with selective
//! (post-selection) inference.
//!
//! The crate fits linear, grouped and P-spline base-learners by boosting,
//! optionally chooses the stopping iteration by k-fold cross-validation, and
//! computes p-values and confidence intervals that account for the
//! selection. Two routes are provided: the analytic polyhedral test that
//! conditions on the full selection path and signs, and a Monte Carlo
//! sampler that conditions only on the set of selected learners.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselearner;
pub mod boosting;
pub mod error;
pub mod inversion;
pub mod linalg;
pub mod normal;
pub mod polyhedron;
pub mod sampler;
pub mod sim;
pub mod stopping;

pub use error::{Error, Result};
