//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{kind} index {id} out of range (len {len})")]
    IndexOutOfRange {
        kind: &'static str,
        id: usize,
        len: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("waveform too short: {samples} samples, window needs {window}")]
    WaveformTooShort { samples: usize, window: usize },

    #[error("zero-power {0} signal")]
    ZeroPower(&'static str),

    #[error("keyword states never observed in labels: {0:?}")]
    MissingStates(Vec<usize>),

    #[error("id mismatch between snapshot and manifest: {0}")]
    IdMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("corrupt container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
