use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Domain errors shared across the crate. Every fallible operation names one
/// of these variants in its contract; the CLI maps them to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("RankDeficient: rank {rank} but full column rank {cols} required")]
    RankDeficient { rank: usize, cols: usize },

    #[error("NotSymmetric: max |M - M^t| entry is {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("NotPositiveDefinite: eigenvalue {eigenvalue:e} is not positive")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("NonPositiveScale: scales[{index}] = {value}")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("DomainTooLarge: n = {n} exceeds the cap {max}")]
    DomainTooLarge { n: usize, max: usize },

    #[error("NotPowerOfTwo: n = {n}")]
    NotPowerOfTwo { n: usize },

    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("MissingDelta: the Gaussian mechanism requires privacy parameters with delta")]
    MissingDelta,

    #[error("EpsilonTooLarge: epsilon = {epsilon} exceeds 8 ln(2/delta) = {bound}")]
    EpsilonTooLarge { epsilon: f64, bound: f64 },

    #[error("InvalidEpsilon: epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("InvalidDelta: delta must lie in (0, 1], got {0}")]
    InvalidDelta(f64),

    #[error("InvalidOptions: {0}")]
    InvalidOptions(String),

    #[error("IllConditioned: pivot {pivot:e} too small during elimination")]
    IllConditioned { pivot: f64 },

    #[error("NonFiniteEntry: entry ({row}, {col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("EmptyMatrix: need at least one row and one column")]
    EmptyMatrix,

    #[error("Parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
