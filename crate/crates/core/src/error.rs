//! Crate-wide error type.

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A concentration profile violates a structural invariant.
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    /// A profile has no trough (0 h) concentration.
    #[error("missing trough concentration at 0 h")]
    MissingTrough,

    /// Too few usable points for a required regression fit.
    #[error("imputation degenerate: {0}")]
    ImputationDegenerate(String),

    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// A PK parameter set where the absorption and elimination rate
    /// constants coincide; the closed-form concentration is undefined.
    #[error("degenerate pk parameters: ka == ke")]
    DegenerateParameters,

    /// Logarithm of a non-positive concentration.
    #[error("log-domain error: {0}")]
    LogDomain(String),

    /// MAP estimation did not produce a usable parameter set.
    #[error("map fit failed: {0}")]
    FitFailed(String),

    /// A feature vector does not match the model's schema.
    #[error("schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },

    /// The same patient appears in both the training and evaluation sets.
    #[error("patient leakage between datasets: {0}")]
    Leakage(String),

    /// An operation received an empty input it cannot handle.
    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable code for CLI error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidProfile(_) => "INVALID_PROFILE",
            Error::MissingTrough => "MISSING_TROUGH",
            Error::ImputationDegenerate(_) => "IMPUTATION_DEGENERATE",
            Error::Config(_) => "CONFIG",
            Error::DegenerateParameters => "DEGENERATE_PARAMETERS",
            Error::LogDomain(_) => "LOG_DOMAIN",
            Error::FitFailed(_) => "FIT_FAILED",
            Error::SchemaMismatch { .. } => "SCHEMA_MISMATCH",
            Error::Leakage(_) => "LEAKAGE",
            Error::Empty(_) => "EMPTY_INPUT",
            Error::Io(_) => "IO",
            Error::Csv(_) => "CSV",
            Error::Json(_) => "JSON",
        }
    }

    /// True for failures of the I/O layer rather than of validation.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
