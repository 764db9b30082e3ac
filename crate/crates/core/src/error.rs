use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class {0} has zero mass")]
    EmptyClass(usize),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("sandwich violated with slack {0:e}")]
    SandwichViolated(f64),
    #[error("bound violated with slack {0:e}")]
    BoundViolated(f64),
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("numerical integration did not converge")]
    QuadratureNotConverged,
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("chain link {link} of class {class} has distance {distance} >= epsilon {epsilon}")]
    ChainViolation {
        class: usize,
        link: usize,
        distance: f64,
        epsilon: f64,
    },
    #[error("could not generate a valid chain: {0}")]
    ChainGenerationFailed(String),
    #[error("class {0} missing from batch")]
    MissingClass(usize),
    #[error("feature term needs a model with a hidden layer")]
    FeatureTermUnavailable,
    #[error("loss is not a metric; check requires kappa = 1")]
    NonMetricLoss,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
