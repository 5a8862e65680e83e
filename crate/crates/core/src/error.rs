use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the oracles, optimizers, estimators and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the identity of the run that produced it.
    pub fn in_run(self, run: impl Into<String>) -> Self {
        Error::Run {
            run: run.into(),
            source: Box::new(self),
        }
    }

    /// Coarse failure category, used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Parse(_) => ErrorCategory::Usage,
            Error::Degenerate(_) | Error::ScheduleInfeasible(_) | Error::Precondition(_) => {
                ErrorCategory::Numeric
            }
            Error::Io { .. } => ErrorCategory::Io,
            Error::Run { source, .. } => source.category(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Numeric,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Numeric => 3,
            ErrorCategory::Io => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
