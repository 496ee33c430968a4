use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point violates its geometry (e.g. an off-sphere input).
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("degenerate retraction: ‖x + step‖ = {norm:e}")]
    DegenerateRetraction { norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The kernel has no gradient at this pair (Laplace at r = 0).
    #[error("undefined gradient: {0}")]
    UndefinedGradient(String),

    #[error("non-finite value at particle {index}: {what}")]
    NonFinite { index: usize, what: String },

    #[error("aborted at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("aborted at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::DegenerateRetraction { .. } => true,
            Error::AtStep { source, .. } | Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
