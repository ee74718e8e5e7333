use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdgError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid index pair ({i}, {j}) for n = {n} (1-based)")]
    InvalidPair { i: usize, j: usize, n: usize },

    #[error("requested dimension {d} exceeds point count {n}")]
    DimensionTooLarge { d: usize, n: usize },

    #[error("reference matrix has zero Frobenius norm")]
    ZeroReference,

    #[error("dual-basis operators need n >= 3, got n = {0}")]
    TooFewPoints(usize),

    #[error("n = {n} exceeds the dense limit of {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error("rank {rank} exceeds the numerical rank of the matrix")]
    RankExceedsSpectrum { rank: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot draw {m} distinct pairs out of {total}")]
    TooManySamples { m: usize, total: usize },

    #[error("no positive observed value to derive a noise scale from")]
    NoPositiveObservation,

    #[error("solver diverged at outer iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("{source_name}: line {line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EdgError>;
