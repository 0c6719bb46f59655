//! Command-line surface of `semidens`: configuration schema, data ingestion,
//! the bundled Old Faithful data, and the fit, simulate and evaluate commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod faithful;

use thiserror::Error;

/// Version written in the `schema_version` column of every CSV output.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, data or command-line input.
    #[error("{0}")]
    Input(String),
    /// The estimator failed on valid input.
    #[error("{0}")]
    Estimation(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Estimation(_) => EXIT_ESTIMATION,
        }
    }
}

impl From<semidens::Error> for CliError {
    fn from(e: semidens::Error) -> Self {
        use semidens::Error as E;
        match e {
            E::Config(_) | E::Domain(_) | E::Unsupported(_) => CliError::Input(e.to_string()),
            E::Degenerate(_) | E::Numerical { .. } | E::Estimation(_) => {
                CliError::Estimation(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
