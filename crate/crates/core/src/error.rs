use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NeshError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty graph: sparsity ratio is undefined without sampled edges")]
    EmptyGraph,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no events")]
    NoEvents,

    #[error("numerical error: {msg} (jitter ladder tried: {attempts:?})")]
    Numerical { msg: String, attempts: Vec<f64> },

    #[error("checkpoint version mismatch: file has version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NeshError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NeshError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NeshError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            NeshError::InvalidArgument(_) => "invalid-argument",
            NeshError::EmptyGraph => "empty-graph",
            NeshError::Parse { .. } => "parse",
            NeshError::NoEvents => "no-events",
            NeshError::Numerical { .. } => "numerical",
            NeshError::VersionMismatch { .. } => "version-mismatch",
            NeshError::Corrupt(_) => "corrupt",
            NeshError::Checksum(_) => "checksum",
            NeshError::Config(_) => "config",
            NeshError::Io { .. } => "io",
        }
    }
}
