use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box: width {width}, height {height}")]
    DegenerateBox { width: f64, height: f64 },

    #[error("non-finite box coordinate")]
    NonFiniteCoordinate,

    #[error("detection {index} has no embedding")]
    MissingEmbedding { index: usize },

    #[error("detection {index} carries no object identity")]
    MissingIdentity { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("scene {scene}: placement failed after {attempts} attempts")]
    PlacementFailure { scene: usize, attempts: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
