use std::path::PathBuf;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing {path}: run `probseg {stage}` first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Stage(String),

    #[error(transparent)]
    Core(#[from] probseg_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// The stage whose output is missing, if that is what went wrong.
    pub fn missing_stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::MissingArtifact { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
