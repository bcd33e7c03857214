use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the scoring, training and experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("empty pool: {0}")]
    EmptyPool(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no stored entry of class {class} is available for the inner distance")]
    MissingClass { class: usize },

    #[error("no stored entry of a class other than {class} is available for the outer distance")]
    MissingOuterClass { class: usize },

    #[error("separability undefined: {0}")]
    SeparabilityUndefined(String),

    #[error("requested {requested} samples but only {available} are available")]
    Size { requested: usize, available: usize },

    #[error("steepness search space is infeasible under the monotone constraint")]
    ConstraintInfeasible,

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("active-learning cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from a bad configuration or input file rather
    /// than from a failure during computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::ConstraintInfeasible
            | Error::Json(_) => true,
            Error::Sample { source, .. } | Error::Cycle { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
