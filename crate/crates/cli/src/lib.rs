//! Experiment runner for the bnnsim accelerator model.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, RunOptions};
pub use config::{ExperimentConfig, Loaded, Overrides};
pub use error::CliError;
