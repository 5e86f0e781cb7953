//! Scenario files, pose files, CSV logs, SVG plots and the `wheelleg`
//! command line around [`wheelleg_core`].
//!
//! Exit codes: 1 for I/O and config errors, 2 when a pose solve fails,
//! 3 when a pose file was solved for a different terrain, 4 for a malformed
//! CSV log.

pub mod commands;
pub mod config;
pub mod error;
pub mod log;
pub mod plot;
pub mod posefile;

pub use error::CliError;
