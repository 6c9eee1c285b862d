//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. The variants map onto
//! the CLI exit-code contract: config/usage problems, data problems and
//! numerical failures are distinguishable by the caller.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or contract violation between volumes, layers or stores.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration (network config, run config,
    /// schedule, CLI usage).
    #[error("config error: {0}")]
    Config(String),

    /// Problem with input data: missing files, malformed containers,
    /// impossible split specs, label issues.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: divergence, NaN gradients, failed gradient check.
    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
