//! Experiment harness: configuration parsing, experiment drivers, and
//! CSV/SVG report writing for the population-dynamics laboratory.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] mflab::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
