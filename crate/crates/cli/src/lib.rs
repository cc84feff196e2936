//! Training harness for `msr-core`: experiment configs, dataset files,
//! CSV metrics, checkpoints and the `msr` command line.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! divergence (NaN/Inf loss), 1 anything else.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fetch;
pub mod metrics;
pub mod report;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
