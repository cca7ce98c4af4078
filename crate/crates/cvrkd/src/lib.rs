//! File formats and the command-line front end for `cvrkd-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{parse_args, run, Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
