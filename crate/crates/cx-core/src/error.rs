//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The fact and foil rows of the head coincide; no contrastive direction exists.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Fact+foil probability mass vanished, so the contrastive measure is undefined.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("invalid span: {0}")]
    InvalidSpan(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid concept: {0}")]
    InvalidConcept(String),

    #[error("no concept: {0}")]
    NoConcept(String),

    #[error("missing counterfactual pair: {0}")]
    MissingPair(String),

    #[error("invalid pair: {0}")]
    InvalidPair(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("stain collision: {0}")]
    StainCollision(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    /// Process exit code for the CLI contract: 1 for validation errors,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateDirection(_)
            | Error::DegenerateDistribution(_)
            | Error::TrainingFailure(_) => 2,
            _ => 1,
        }
    }
}
