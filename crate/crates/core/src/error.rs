use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("variance matrix is singular even after jitter {max_jitter:e}")]
    SingularVariance { max_jitter: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semi-definite: min eigenvalue {min_eigenvalue:e}")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("lengthscale {index} is not positive ({value})")]
    NonPositiveLengthscale { index: usize, value: f64 },

    #[error("variance of X - X' in dimension {index} is {value:e}; the cross-covariance is inconsistent")]
    NegativeDifferenceVariance { index: usize, value: f64 },

    #[error("inputs sharing identity {id} have different moments")]
    InconsistentIdentity { id: u64 },

    #[error("uncertain time has E[T] = {mean} < 3, outside the range of the structured error model")]
    TimeBelowThree { mean: f64 },

    #[error("basis regression matrix is rank deficient")]
    RankDeficientBasis,

    #[error("basis `{0}` has no second-order specification for uncertain inputs")]
    UnsupportedBasisForUncertainInput(String),

    #[error("design rows {first} and {second} coincide")]
    DegenerateDesign { first: usize, second: usize },

    #[error("arity mismatch at {context}: expected {expected}, found {found}")]
    ArityMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("exact node `{0}` needs a zero-variance input")]
    ExactNodeNeedsKnownInput(String),

    #[error("predictive variance at point {index} is not positive ({value:e})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("prediction inputs correlated with training data are not supported")]
    CorrelatedPredictionInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model document: {0}")]
    Document(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularVariance { .. }
                | Error::RankDeficientBasis
                | Error::NotPositiveSemiDefinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
