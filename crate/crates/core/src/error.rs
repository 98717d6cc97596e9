use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("empty document")]
    EmptyDocument,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: label {label} out of range for {classes} classes")]
    LabelRange {
        path: PathBuf,
        line: usize,
        label: usize,
        classes: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("word not in vocabulary: {0:?}")]
    Lookup(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric anomaly: {0}")]
    Numeric(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

impl Error {
    /// Stable snake_case name for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Argument(_) => "argument",
            Error::EmptyDocument => "empty_document",
            Error::Parse { .. } => "parse",
            Error::LabelRange { .. } => "label_range",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Lookup(_) => "lookup",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Lookup(_) => 2,
            Error::Parse { .. }
            | Error::LabelRange { .. }
            | Error::Format(_)
            | Error::EmptyDocument
            | Error::Io { .. }
            | Error::Contract(_) => 3,
            Error::Checkpoint(_) => 4,
            Error::Shape { .. } | Error::Domain(_) | Error::Numeric(_) | Error::Json(_) => 1,
        }
    }
}
