// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input value {value} outside [0, {max}]")]
    InputOutOfRange { value: i64, max: i64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("batch norm channel {channel} has gamma = 0")]
    DegenerateBatchNorm { channel: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trace does not match the graph: {0}")]
    StaleTrace(String),

    #[error("flip bound hypothesis violated: min local tolerance {min_tolerance} < b = {b}")]
    HypothesisViolated { min_tolerance: f64, b: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
