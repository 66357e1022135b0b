//! Command-line front end: PNG IO, dataset folders, flat config files and
//! the `asconvsr` subcommands.

pub mod commands;
pub mod config_file;
pub mod dataset;
pub mod error;
pub mod png;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
