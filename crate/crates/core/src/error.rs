use std::path::PathBuf;

use thiserror::Error;

use crate::events::Violation;
use crate::gradients::ParamIndex;
use crate::training::TrainHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("event {event}: mark coordinate {coordinate} = {value} outside its declared range")]
    MarkOutOfRange {
        event: usize,
        coordinate: usize,
        value: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}", format_validation(*.line, .violations))]
    Validation {
        line: Option<usize>,
        violations: Vec<Violation>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String, index: ParamIndex },

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        history: Box<TrainHistory>,
    },

    #[error("every generated sequence is empty; cannot estimate a threshold")]
    EmptyGeneratedBatch,

    #[error("dataset has no anomalous sequences")]
    NoAnomalies,

    #[error("detector has no frozen Fourier features")]
    MissingFeatures,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_validation(line: Option<usize>, violations: &[Violation]) -> String {
    let body = violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    match line {
        Some(l) => format!("line {l}: invalid sequence: {body}"),
        None => format!("invalid sequence: {body}"),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
