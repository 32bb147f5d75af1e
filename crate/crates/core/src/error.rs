use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Each variant maps onto a process exit code through [`SisError::exit_code`].
#[derive(Debug, Error)]
pub enum SisError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("subcritical regime: {0}")]
    Subcritical(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("network generation failed: {0}")]
    Generation(String),

    #[error("lambda tuning failed: {0}")]
    Tuning(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SisError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SisError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SisError::Numerical(msg.into())
    }

    pub fn capacity(msg: impl Into<String>) -> Self {
        SisError::Capacity(msg.into())
    }

    /// Exit codes: 2 validation, 3 subcritical, 4 numerical failure, 5 capacity.
    pub fn exit_code(&self) -> i32 {
        match self {
            SisError::Parse { .. }
            | SisError::Validation(_)
            | SisError::Io(_)
            | SisError::Json(_)
            | SisError::Csv(_) => 2,
            SisError::Subcritical(_) => 3,
            SisError::Numerical(_) | SisError::Generation(_) | SisError::Tuning(_) => 4,
            SisError::Capacity(_) => 5,
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            SisError::Parse { .. } => "parse",
            SisError::Validation(_) => "validation",
            SisError::Subcritical(_) => "subcritical",
            SisError::Numerical(_) => "numerical",
            SisError::Capacity(_) => "capacity",
            SisError::Generation(_) => "generation",
            SisError::Tuning(_) => "tuning",
            SisError::Io(_) => "io",
            SisError::Json(_) => "json",
            SisError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, SisError>;
