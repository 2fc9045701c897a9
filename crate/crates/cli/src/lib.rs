//! Command-line front end: configuration layering and the pipeline
//! commands behind the `psyphy` binary.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::Cli;
pub use config::{ConfigLayer, RunConfig};
