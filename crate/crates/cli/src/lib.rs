//! Command implementations behind the `fedoui` binary.
//!
//! Exit codes: 0 ok, 1 other failure, 2 configuration, 3 dataset,
//! 4 report, 5 round inspection.

pub mod commands;
pub mod config_io;
pub mod error;
pub mod manifest;

pub use error::CliError;
