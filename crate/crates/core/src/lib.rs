//! Design-based inference for adaptive experiments.
//!
//! The crate treats potential outcomes as fixed and assignment as the only
//! randomness. It provides adaptive designs, outcome models that only look
//! at the past, IPW/AIPW estimators with their covariance estimators and
//! Wald confidence sets, an exact enumeration oracle for small instances and
//! a Monte Carlo harness.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contrast;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod history;
pub mod linalg;
pub mod oracle;
pub mod outcome_models;
pub mod population;
pub mod rng;

pub use contrast::Contrast;
pub use error::{Error, ErrorClass, Result};
