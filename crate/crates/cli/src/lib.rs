//! Library side of the `hypalign` command: configuration handling and the
//! subcommand bodies, kept here so tests can drive them without a process.

pub mod config;
pub mod run;

pub use config::{FieldError, RunConfig};
