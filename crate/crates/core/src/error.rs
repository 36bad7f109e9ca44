use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}:{line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("malformed record {record}: {message}")]
    InvalidRecord { record: String, message: String },

    #[error("concept has no images: {0}")]
    NoImages(String),

    #[error("missing image feature for image_id {0}")]
    MissingFeature(String),

    #[error("missing embedding for token {0:?}")]
    MissingEmbedding(String),

    #[error("zero representation vector for concept {0}")]
    ZeroVector(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    #[error("insufficient negative pool: need {needed}, have {available}")]
    InsufficientNegatives { needed: usize, available: usize },

    #[error("no useful weak learner for tag {0:?}")]
    NoUsefulWeakLearner(String),

    #[error("no positive items in ranking")]
    NoPositives,

    #[error("no images match tag {0:?}")]
    NoMatchingImages(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} requires {prerequisite}; run `acd {prerequisite}` first")]
    MissingPrerequisite {
        stage: &'static str,
        prerequisite: &'static str,
    },

    #[error("stale artifact for stage {stage}: {reason}; rerun `acd {stage}`")]
    StaleArtifact { stage: &'static str, reason: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
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

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit status for the CLI: 1 usage, 2 data, 3 stale artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::StaleArtifact { .. } => 3,
            Error::Context { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
