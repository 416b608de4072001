//! Files, configuration and the command line around `phg-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod pipeline;

pub use error::{CliError, Result};
