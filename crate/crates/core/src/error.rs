use thiserror::Error;

/// Errors raised by validation, numerics and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("subject {id}: transition not allowed ({from} -> {to})")]
    TransitionNotAllowed { id: String, from: usize, to: usize },

    #[error("subject {id}: longitudinal time after last event time ({t} > {last})")]
    LongitudinalAfterLastEvent { id: String, t: f64, last: f64 },

    #[error("subject {id}: times are not strictly increasing at {t}")]
    NonIncreasingTimes { id: String, t: f64 },

    #[error("unknown covariate column `{0}`")]
    UnknownCovariate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("time {t} outside knot range [{lo}, {hi}]")]
    OutsideKnotRange { t: f64, lo: f64, hi: f64 },

    #[error("no sign change in bracket [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("diagonal increment below -1 at time {0}")]
    DiagonalBelowMinusOne(f64),

    #[error("subject {id}: all quadrature nodes underflow")]
    Underflow { id: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation-class errors map to exit code 2; numerical ones to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::TransitionNotAllowed { .. }
                | Error::LongitudinalAfterLastEvent { .. }
                | Error::NonIncreasingTimes { .. }
                | Error::UnknownCovariate(_)
                | Error::Dimension(_)
                | Error::Spec(_)
                | Error::Parse(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
