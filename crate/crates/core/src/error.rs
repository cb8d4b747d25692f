use std::path::PathBuf;

use crate::ChunkId;

pub type Result<T, E = CardError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CardError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus at {0} contains no regular files")]
    EmptyCorpus(PathBuf),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("not enough chunks to build training samples (need at least 2, got {0})")]
    EmptySamples(usize),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("malformed file at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("corrupt patch: {0}")]
    CorruptPatch(String),

    #[error("base mismatch: patch expects base {expected}, got {actual}")]
    BaseMismatch { expected: String, actual: String },

    #[error("verification failed for chunk {chunk_id}: {reason}")]
    Corruption { chunk_id: ChunkId, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CardError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CardError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CardError::Parameter(msg.into())
    }

    /// True for failures that indicate stored data no longer reproduces its input.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            CardError::Corruption { .. }
                | CardError::CorruptPatch(_)
                | CardError::BaseMismatch { .. }
                | CardError::Format { .. }
        )
    }

    pub fn is_training_failure(&self) -> bool {
        matches!(
            self,
            CardError::TrainingDiverged { .. } | CardError::EmptySamples(_)
        )
    }
}
