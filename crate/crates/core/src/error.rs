use std::path::PathBuf;

use crate::volume::{Modality, Plane};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("slice index {k} out of range for {plane} plane (valid 1..={bound})")]
    SliceIndex { plane: Plane, k: usize, bound: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid volume: {0}")]
    Validation(String),

    #[error("expected {expected} volume, got {actual}")]
    WrongModality { expected: Modality, actual: Modality },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed bundle header {path}: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("unknown modality tag {0:?}")]
    UnknownModality(String),

    #[error("payload length mismatch in {path}: header implies {expected} voxels, found {actual} bytes")]
    PayloadLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid phantom spec: {0}")]
    PhantomSpec(String),

    #[error("brain segmentation failed: {0}")]
    Segmentation(String),

    #[error("sequence coverage error: missing start indices {missing:?}, duplicated {duplicated:?}")]
    Coverage {
        missing: Vec<usize>,
        duplicated: Vec<usize>,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown patient id {0:?}")]
    UnknownPatient(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
