use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Each variant maps onto a stable machine-readable code and a process exit
/// code (see [`Error::exit_code`]), so the CLI and the C ABI can surface the
/// same classification.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path} line {line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("parse error at record {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate id {0:?}")]
    Duplicate(String),

    #[error("insufficient {what}: required {required}, available {available}")]
    Capacity {
        what: String,
        required: usize,
        available: usize,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value in row {row}: {msg}")]
    Numeric { row: usize, msg: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("tweet {0:?} is unscorable: every expert withheld its vote")]
    Unscorable(String),

    #[error("metrics undefined: {0}")]
    UndefinedMetrics(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("structural error in tree {tree}: {msg}")]
    Structure { tree: String, msg: String },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("model serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier for logs and the results ledger.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Duplicate(_) => "duplicate",
            Error::Capacity { .. } => "capacity",
            Error::Label(_) => "label",
            Error::Config(_) => "config",
            Error::Numeric { .. } => "numeric",
            Error::Shape { .. } => "shape",
            Error::Unscorable(_) => "unscorable",
            Error::UndefinedMetrics(_) => "undefined_metrics",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Structure { .. } => "structure",
            Error::EmptyResult(_) => "empty_result",
            Error::Serialization(_) => "serialization",
        }
    }

    /// Process exit code. 0 is success and 1 is reserved for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 10,
            Error::Format { .. } => 11,
            Error::Parse { .. } => 12,
            Error::Duplicate(_) => 13,
            Error::Capacity { .. } => 14,
            Error::Label(_) => 15,
            Error::Config(_) => 16,
            Error::Numeric { .. } => 17,
            Error::Shape { .. } => 18,
            Error::Unscorable(_) => 19,
            Error::UndefinedMetrics(_) => 20,
            Error::UndefinedCorrelation(_) => 21,
            Error::Structure { .. } => 22,
            Error::EmptyResult(_) => 23,
            Error::Serialization(_) => 24,
        }
    }
}
