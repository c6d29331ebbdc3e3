use thiserror::Error;

/// Errors raised by the core operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsdError {
    #[error("dimension must be positive: {what} = 0")]
    EmptyDimension { what: &'static str },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("entry ({row}, {col}) above the diagonal is {value}, expected 0")]
    NotLowerTriangular { row: usize, col: usize, value: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("size {size} exceeds the limit {limit} for {what}")]
    SizeExceeded {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("state matrix at step {step} is not a scalar multiple of the identity")]
    NotScalarIdentity { step: usize },

    #[error("zero gain A[{step}][{mode}]: the full-rank dual needs every gain after step 1 to be nonzero")]
    ZeroGain { step: usize, mode: usize },

    #[error("cumulative gain magnitudes of mode {mode} span a ratio of {ratio:e}, above the limit {limit:e}")]
    UnstableScaling { mode: usize, ratio: f64, limit: f64 },

    #[error("matrix has no 1-SS masked-attention dual with state width {n}: block {start}..={end} has {new_columns} new columns")]
    NotRepresentable {
        n: usize,
        start: usize,
        end: usize,
        new_columns: usize,
    },

    #[error("reconstruction residual {residual:e} exceeds tolerance {tolerance:e}")]
    ReconstructionFailure { residual: f64, tolerance: f64 },

    #[error("block at step {step} has rank {rank}, above the state width {n}")]
    RankExceedsN { step: usize, rank: usize, n: usize },

    #[error("no consistent transition at step {step}: relative residual {residual:e} ({side} side)")]
    InconsistentTransition {
        step: usize,
        side: &'static str,
        residual: f64,
    },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SsdError>;
