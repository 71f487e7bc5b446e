use thiserror::Error;

/// Errors raised by the library and mapped onto CLI exit codes.
#[derive(Debug, Error)]
pub enum MondrianError {
    /// Malformed or out-of-domain input (bad point, inadmissible response, bad flag).
    #[error("input error: {0}")]
    Input(String),
    /// A partition grew past the configured leaf budget.
    #[error("resource error: {0}")]
    Resource(String),
    /// A numerical routine produced a non-finite value or could not proceed.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MondrianError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        MondrianError::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        MondrianError::Numeric(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            MondrianError::Input(_)
            | MondrianError::Io(_)
            | MondrianError::Csv(_)
            | MondrianError::Json(_) => 2,
            MondrianError::Resource(_) => 3,
            MondrianError::Numeric(_) => 4,
        }
    }
}

pub type Result<T, E = MondrianError> = std::result::Result<T, E>;
