use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report. Each variant maps to a distinct
/// process exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("network spec error at layer {layer}: {reason}")]
    Spec { layer: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("pipeline order error: {0}")]
    PipelineOrder(String),

    #[error("config error at line {line}, key `{key}`: {reason}")]
    Config {
        key: String,
        line: usize,
        reason: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    /// Process exit code for this error category. 0 and 1 are never used;
    /// 2 is reserved for command-line usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Format { .. } | Error::Parse { .. } => 4,
            Error::Config { .. } => 5,
            Error::Shape { .. } | Error::InvalidArgument { .. } => 6,
            Error::Validation(_) | Error::Dataset(_) | Error::OutOfBounds(_) => 7,
            Error::Generation(_) => 8,
            Error::Spec { .. } | Error::Checkpoint(_) => 9,
            Error::Divergence { .. } => 10,
            Error::PipelineOrder(_) => 11,
            Error::UndefinedMetric(_) => 12,
        }
    }
}
