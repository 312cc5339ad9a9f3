//! Censored and fair universal representations.
//!
//! An encoder perturbs data so that an adversary cannot infer a sensitive
//! label, subject to an expected distortion budget. This crate provides the
//! closed-form Gaussian-mixture solution, a dense-network engine for
//! data-driven training, and the metrics used to evaluate representations.

// `!(x >= 0.0)` is the intended way to reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod data;
pub mod distributions;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod mi;
pub mod nn;
pub mod numerics;
pub mod registry;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use numerics::RngState;
