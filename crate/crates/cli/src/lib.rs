//! Experiment harness: phantom generation, simulation, reconstruction and
//! reporting driven by TOML configs.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{Experiment, MethodOutcome};
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, Result};
