use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the gaze modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range for {len} segments")]
    Index { index: usize, len: usize },

    #[error("degenerate batch: batch normalisation needs at least 2 rows in training, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("unknown detector label `{0}`")]
    UnknownLabel(String),

    #[error("graph assembly error: {0}")]
    Assembly(String),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("frame underrun: no frame for timestep {0}")]
    FrameUnderrun(usize),

    #[error("degenerate saliency map: {0}")]
    DegenerateMap(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("scene script error: {0}")]
    Script(String),

    #[error("missing prerequisite `{path}`: run `{stage}` first")]
    Prerequisite { stage: &'static str, path: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
