//! Command-line front end: file formats and subcommand dispatch.
//!
//! The binary is a thin wrapper over [`commands::dispatch`], which is also
//! the entry point tests drive in-process.

pub mod commands;
pub mod io;

pub use commands::{dispatch, CliError};
