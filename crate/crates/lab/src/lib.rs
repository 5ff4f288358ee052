//! Experiment runner for `saddlescape-core`: config parsing, the
//! `saddlescape` command line, ordered parallel orchestration and the CSV /
//! JSON output formats.

#![forbid(unsafe_code)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod parallel;
pub mod setup;

pub use config::{parse_config, ConfigError, ConfigErrors, ExperimentConfig};
pub use error::LabError;
