//! Library side of the `confbb` command-line tool.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;

use std::fmt;
use std::path::Path;

pub use commands::{run_command, Command};
pub use config::RunConfig;

/// Process exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, arguments or unreadable input.
    Config(String),
    /// The computation or output writing failed.
    Run(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Run(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Run(_) => EXIT_PARTIAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Run(m) => write!(f, "run error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<confbb::Error> for CliError {
    fn from(e: confbb::Error) -> Self {
        Self::Run(e.to_string())
    }
}
