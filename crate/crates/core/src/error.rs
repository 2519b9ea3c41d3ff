use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad magic or truncated header in a binary container.
    #[error("format error: {0}")]
    Format(String),

    /// Header, payload and sidecar disagree with each other.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("degenerate input: row {row} ({id}) has zero norm")]
    ZeroNorm { row: usize, id: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("tracklet index error: {0}")]
    Index(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("batch composition error: {0}")]
    BatchComposition(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
