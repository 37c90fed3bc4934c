//! Command-line driver for `dp-mtv`: configuration files, artifact
//! persistence, privacy-budget sweeps and audits.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod sweep;


pub use error::{CliError, CliResult};
