use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("items referenced without metadata: {}", .0.join(", "))]
    MissingMetadata(Vec<String>),

    #[error("user {0} has no positive interactions")]
    EmptyHistory(String),

    #[error("unknown {kind} `{key}`")]
    UnknownKey { kind: &'static str, key: String },

    #[error("{kind} index {index} out of range (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("no neighbours available for user {0}")]
    EmptyNeighborhood(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("projection collapsed the input to the zero vector")]
    DegenerateProjection,

    #[error("candidate {0} has a zero embedding")]
    DegenerateCandidate(String),

    #[error("ranking has {len} entries, nothing ranked after position {threshold}")]
    EmptyTail { len: usize, threshold: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("field `{0}` must not be empty")]
    EmptyField(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("transport error{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        message: String,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("judge response carried neither a `Yes` nor a `No` logprob")]
    MissingToken,

    #[error("bad artifact {path}: {message}")]
    Artifact { path: String, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn artifact(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
