//! Experiment harness for twist decoding: TOML-configured method comparisons,
//! lambda grid tuning, timing, training-corpus subsampling and synthetic
//! scenarios. The `twist` binary exposes each runner as a subcommand.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod methods;
pub mod models;
pub mod synth;

pub use config::{ExperimentConfig, Method};
pub use error::{HarnessError, Result};
pub use experiment::{bench, run_experiment, subsample_sweep, tune_lambda, Models, RunReport};
