use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("system is not observable: stacked rank {rank} < state dimension {dim}")]
    NotObservable { rank: usize, dim: usize },
    #[error("state transition matrix is singular (sigma_min / sigma_max = {ratio:e})")]
    SingularTransition { ratio: f64 },
    #[error("{0} must be symmetric positive semidefinite")]
    NotSymmetricPsd(&'static str),
    #[error("Jordan transform is ill-conditioned (cond = {cond:e})")]
    IllConditionedTransform { cond: f64 },
    #[error("eigenvalue with magnitude {magnitude:e} is numerically zero")]
    ZeroEigenvalue { magnitude: f64 },
    #[error("Jordan reconstruction residual {residual:e} exceeds tolerance")]
    InaccurateDecomposition { residual: f64 },
    #[error("decomposition failed to converge: {0}")]
    NoConvergence(&'static str),
    #[error("success rate 1 requires infinite transmission power")]
    InfinitePower,
    #[error("transmission power must be nonnegative, got {0}")]
    NegativePower(f64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("channel constant {0} outside the open interval (0, 1)")]
    InvalidKappa(f64),
    #[error("observation noise variance of sensor {sensor} is not positive")]
    ZeroNoiseVariance { sensor: usize },
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("first dimension of Jordan block {block} is observed by no sensor")]
    UncoveredBlock { block: usize },
    #[error("subset enumeration needs {terms} terms, budget is {budget}")]
    EnumerationTooLarge { terms: u128, budget: u128 },
    #[error("target probability {target} unreachable, supremum is {supremum}")]
    TargetUnreachable { target: f64, supremum: f64 },
    #[error("empty action space: lower bound {lo} exceeds upper bound {hi}")]
    EmptyActionSpace { lo: f64, hi: f64 },
    #[error("invalid bound context: {0}")]
    InvalidBoundContext(String),
    #[error("non-finite activation: {0}")]
    NonFiniteActivation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("configuration section [{section}] is required by {by}")]
    MissingSection { section: String, by: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(
    context: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
