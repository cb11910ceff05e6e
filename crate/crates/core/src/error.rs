use thiserror::Error;

/// Smallest accepted `alpha - 1`. Below this the exponent `1/(alpha-1)` is
/// numerically useless.
pub const MIN_ALPHA_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("alpha must be >= 1 + {MIN_ALPHA_GAP}, got {0}")]
    InvalidAlpha(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stale lookup tables: {0}")]
    StaleTables(String),

    #[error("dense oracle limited to n <= {cap}, got n = {n}")]
    OracleCapExceeded { n: usize, cap: usize },

    #[error("degenerate entmax jacobian (sum of u is zero)")]
    DegenerateJacobian,
}

pub type Result<T> = std::result::Result<T, Error>;
