//! User-facing surface: dataset ingestion, configuration, the streaming
//! pipeline driver, and bit-exact file output formats.

use thiserror::Error;

pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;

/// Top-level error with a process exit code attached: 1 for usage errors,
/// 2 for data errors, 3 for numerical failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<dpv_core::Error> for CliError {
    fn from(e: dpv_core::Error) -> Self {
        use dpv_core::Error as E;
        match e {
            E::NumericalFailure(_) | E::DegenerateProblem(_) | E::DegenerateWindow => {
                CliError::Numerical(e.to_string())
            }
            E::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
