//! Command-line front end for the flexdep pipeline.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod model_file;

pub use error::{CliError, CliResult};
