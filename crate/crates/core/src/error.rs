use std::path::PathBuf;

/// Errors raised by the solver, the experiment harness and the I/O layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical blow-up at step {step}, cell {cell}: value {value}")]
    BlowUp { step: u64, cell: usize, value: f64 },

    #[error("solution support reached the domain boundary at step {step} (t = {t}, |u| = {value:e})")]
    BoundaryReached { step: u64, t: f64, value: f64 },

    #[error("invariant violation: {0}")]
    Violation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BlowUp { .. } => 2,
            Error::Violation(_) | Error::BoundaryReached { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
