//! Experiment configuration, drivers and output files behind the CLI.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ModelSource};
