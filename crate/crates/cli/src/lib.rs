//! Experiment harness for token pruning and squeezing: run configuration,
//! report encoding and the protocols behind each `tps` subcommand.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::{Format, Overrides, Resolved, RunConfig};
pub use error::{CliError, Result};
pub use report::Report;
