//! Command-line driver: JSON experiment configs in, CSV/JSON artifacts out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Context, Outcome};
pub use error::{exit, CliError};
