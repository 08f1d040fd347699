use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error in {context}: {msg}")]
    Format { context: String, msg: String },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("state {0} is not a source state of the transition table")]
    Origin(String),

    #[error("roll-outs do not share an origin")]
    Pairing,

    #[error("sweep error: {0}")]
    Sweep(String),

    #[error("least-squares fit failed: {0}")]
    Fit(String),

    #[error("simulator session: {0}")]
    Session(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data/format, 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}
