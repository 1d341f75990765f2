use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("explanation error: {0}")]
    Explanation(String),
    #[error("story assembly error: {0}")]
    Assembly(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("quality floor unmet for {task}: {message}")]
    QualityFloor { task: String, message: String },
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("output root {} is locked by another run; remove the lock file if no run is active", .0.display())]
    Locked(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for unmet
    /// quality floors and missing artifacts, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::QualityFloor { .. } | Error::MissingArtifact(_) => 3,
            _ => 1,
        }
    }

    /// Short stable code used on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config { .. } => "E_CONFIG",
            Error::Scene(_) => "E_SCENE",
            Error::Vocabulary(_) => "E_VOCAB",
            Error::Domain(_) => "E_DOMAIN",
            Error::Shape(_) => "E_SHAPE",
            Error::Contract(_) => "E_CONTRACT",
            Error::Training(_) => "E_TRAINING",
            Error::Explanation(_) => "E_EXPLANATION",
            Error::Assembly(_) => "E_ASSEMBLY",
            Error::Render(_) => "E_RENDER",
            Error::QualityFloor { .. } => "E_QUALITY_FLOOR",
            Error::MissingArtifact(_) => "E_MISSING_ARTIFACT",
            Error::Locked(_) => "E_LOCKED",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Image(_) => "E_IMAGE",
        }
    }
}
