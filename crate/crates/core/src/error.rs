use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid example `{id}`: {message}")]
    InvalidExample { id: String, message: String },

    #[error("unknown label `{label}` for schema `{schema}`")]
    UnknownLabel { label: String, schema: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class `{0}` has no examples; inverse-frequency weights are undefined")]
    ZeroClassCount(String),

    #[error("split: {0}")]
    Split(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoding: {0}")]
    Encoding(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("training: {0}")]
    Training(String),

    #[error("labeling response: {0}")]
    Response(String),

    #[error("labeling aborted: {failed} of {attempted} pairs failed (threshold {threshold})")]
    LabelingAborted {
        failed: usize,
        attempted: usize,
        threshold: f64,
    },

    #[error("adapter `{adapter}`: {message}")]
    Adapter { adapter: String, message: String },

    #[error("comparison: {0}")]
    Comparison(String),

    #[error("http: {0}")]
    Http(String),

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
    /// Errors caused by bad input data or configuration, as opposed to
    /// failures while doing otherwise valid work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRecord { .. }
                | Error::InvalidExample { .. }
                | Error::UnknownLabel { .. }
                | Error::DuplicateId(_)
                | Error::EmptyDataset
                | Error::ZeroClassCount(_)
                | Error::Split(_)
                | Error::Schema(_)
                | Error::Config(_)
                | Error::Encoding(_)
                | Error::Comparison(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
