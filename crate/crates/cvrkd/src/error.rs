use std::fmt;
use std::path::Path;

use cvrkd_core::Error as CoreError;

/// A failure with a stable process exit code.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Data(String),
    Config(String),
    Checkpoint(String),
    Usage(String),
    Decode(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Io(_) => 2,
            CliError::Data(_) => 3,
            CliError::Config(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Usage(_) => 6,
            CliError::Decode(_) => 7,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Io(m) => ("io error", m),
            CliError::Data(m) => ("data error", m),
            CliError::Config(m) => ("config error", m),
            CliError::Checkpoint(m) => ("checkpoint error", m),
            CliError::Usage(m) => ("usage error", m),
            CliError::Decode(m) => ("decode error", m),
            CliError::Other(m) => ("error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) => CliError::Config(msg),
            CoreError::Data(_) | CoreError::EmptyBatch { .. } => CliError::Data(msg),
            CoreError::Checkpoint { .. } => CliError::Checkpoint(msg),
            _ => CliError::Other(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
