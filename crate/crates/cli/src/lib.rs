//! Driver behind the `modelrisk` binary: sensitivity curves over σ, hedge
//! tables, the invariant self-check and LP oracle runs.

pub mod config;
pub mod curve;
pub mod hedge;
pub mod oracle;
pub mod output;
pub mod selfcheck;
pub mod svg;

use std::fmt;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or flags: exit 2.
    Config(String),
    /// A check or computation failed: exit 1.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Check(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Check(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<modelrisk::Error> for CliError {
    fn from(e: modelrisk::Error) -> Self {
        Self::Check(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Check(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Check(format!("csv: {e}"))
    }
}
