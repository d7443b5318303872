//! Forecasting trained-network weights into unseen regimes.
//!
//! The pipeline: train a parent network on the pre-shift portion of a
//! keyed dataset, nudge it once per training sample to record how every
//! weight responds to that sample (a sensitivity matrix), regress each
//! weight against low-dimensional predictors of the data (EOF principal
//! components or raw inputs), then evaluate the regressions at
//! out-of-distribution predictor values to synthesize "child" networks
//! for points the parent never saw.
//!
//! Everything is deterministic given the seeds in the run configuration:
//! reruns produce byte-identical artifacts.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod net;
pub mod pipeline;
pub mod predictors;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod weightreg;

pub use error::{Error, Result};
