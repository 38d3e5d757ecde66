//! Non-stationary peaks-over-threshold analysis for directional data.
//!
//! The pipeline selects a direction-dependent threshold, estimates tail
//! parameters with a weighted moment estimator, local weighted GPD maximum
//! likelihood, or a penalized periodic-spline GPD model, and turns those into
//! extreme quantiles, T-year levels and finite right endpoints with bootstrap
//! bands.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod circular;
pub mod config;
pub mod error;
pub mod exec;
pub mod levels;
pub mod optim;
pub mod pipeline;
pub mod random;
pub mod sample;
pub mod spline;
pub mod synth;
pub mod tail;
pub mod threshold;

pub use error::{Error, Result};
