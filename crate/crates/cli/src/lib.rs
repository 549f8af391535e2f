//! Configuration, data loading, subcommand dispatch and report rendering for
//! the `elicit` command-line tool.

pub mod commands;
pub mod config;
pub mod data;
pub mod report;

pub use commands::run_subcommand;
pub use config::{Command, RunConfig};
pub use report::Report;
