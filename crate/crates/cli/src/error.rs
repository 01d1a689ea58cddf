use std::path::PathBuf;

use thiserror::Error;

/// Failure of a command, carrying the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {}{msg}", path.display(), line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Schema { path: PathBuf, line: Option<u64>, msg: String },
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Schema { .. } | CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn schema(path: impl Into<PathBuf>, line: Option<u64>, msg: impl Into<String>) -> Self {
        CliError::Schema { path: path.into(), line, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<psyagree_core::Error> for CliError {
    fn from(e: psyagree_core::Error) -> Self {
        use psyagree_core::Error as E;
        match e {
            E::Config(_) | E::UnknownCategory(_) => CliError::Config(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
