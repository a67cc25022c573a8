use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
///
/// Mathematical events that are expected outcomes (a decomposition factor
/// exploding, a trajectory blowing up) are *not* errors: they are recorded on
/// the returned value. The variants here are reserved for invalid input and
/// genuine failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("grid index {index} out of range (grid has {len} points)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("index order violated: {0}")]
    IndexOrder(String),

    #[error("fine grid does not refine the coarse grid: coarse point t = {0} missing")]
    NotRefinement(f64),

    #[error("non-finite value produced at t = {time} (grid index {index})")]
    StepFailure { time: f64, index: usize },

    #[error("function evaluation failed: {0}")]
    Evaluation(String),

    #[error("transversality lost (Ad(eta) of the second distribution meets the first): {0}")]
    TransversalityLost(String),

    #[error("point {point:?} lies outside the sampled domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("closed form singular at sample {index} (X = {x})")]
    Singular { index: usize, x: f64 },

    #[error("matrix has an eigenvalue on the closed negative real axis ({0}); no principal real logarithm")]
    NegativeRealEigenvalue(f64),

    #[error("failed to converge: {0}")]
    Convergence(String),

    #[error("internal consistency failure: {0}")]
    ShapeViolation(String),

    #[error("decomposition exploded at grid index {index}")]
    Explosion { index: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
