use std::path::PathBuf;

use thiserror::Error;

use crate::modality::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An API contract was violated (e.g. backward from a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing modality `{0}`")]
    MissingModality(Modality),

    #[error("{modality}: expected vector of length {expected}, got {got}{}", line_suffix(*line))]
    WrongLength {
        modality: Modality,
        expected: usize,
        got: usize,
        line: Option<usize>,
    },

    #[error("unknown label `{label}`{}", line_suffix(*line))]
    UnknownLabel { label: String, line: Option<usize> },

    #[error("invalid input{}: {message}", line_suffix(*line))]
    Input { message: String, line: Option<usize> },

    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class `{0}` has fewer than 2 samples; cannot stratify")]
    Stratification(String),

    #[error("ROC undefined for class {class}: truth contains only one class")]
    DegenerateRoc { class: usize },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: i64, expected: i64 },

    #[error("checkpoint parameter `{name}` has shape {found:?}, config requires {expected:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    CheckpointMalformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" (line {l})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
