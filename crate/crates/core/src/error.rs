use thiserror::Error;

/// Errors raised by the estimation pipelines.
#[derive(Debug, Error)]
pub enum SpiceError {
    #[error("matrix is not factorizable (dimension {dim}, last jitter tried {jitter:e})")]
    NonFactorizable { dim: usize, jitter: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("frequency grid or sample set is empty")]
    EmptyGrid,

    #[error("non-finite value in input ({0})")]
    NonFiniteInput(&'static str),

    #[error("atom index {index} out of range for {len} atoms")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("noise variance at sample {index} must be positive, got {value}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("negative amplitude {value} for atom {index}")]
    NegativeAmplitude { index: usize, value: f64 },

    #[error("measurement vector is identically zero")]
    ZeroMeasurement,

    #[error("weight for atom {index} is not strictly positive")]
    ZeroWeight { index: usize },

    #[error("normalizer rho vanished: all powers collapsed")]
    ZeroRho,

    #[error("initial powers must be strictly positive (atom {index} has {value})")]
    NonPositiveInit { index: usize, value: f64 },

    #[error("solver did not converge within {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize },

    #[error("power vector has empty support")]
    EmptySupport,

    #[error("all coefficients are zero")]
    AllZeroCoefficients,

    #[error("degenerate denominator in change of variables")]
    DegenerateDenominator,

    #[error("invalid group structure: {0}")]
    InvalidGroups(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SpiceError>;
