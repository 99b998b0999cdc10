//! Command-line plumbing around `rtrl-core`: run configuration, checkpoints,
//! metrics files, the cost benchmark and the `rtrl` subcommands.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod train;

pub use error::{CliError, CliResult};
