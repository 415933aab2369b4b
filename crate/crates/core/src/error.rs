use thiserror::Error;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("field `{0}` is diagnostic-only and cannot be passed to a solver")]
    DiagnosticOnly(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e}, tolerance {tol:.1e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("under-resolved oscillation: {cells_per_period:.2} cells per period, need at least {required}")]
    UnderResolved {
        cells_per_period: f64,
        required: usize,
    },

    #[error("truncation plan violated: {0}")]
    TruncationPlan(String),

    #[error("flux has nonzero cell mean {0:.3e}; the homogenized tensor is inconsistent")]
    NonzeroFluxMean(f64),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("nonpositive value {value} at sample {index}")]
    NonpositiveValue { index: usize, value: f64 },

    #[error("empty subdomain or sample set: {0}")]
    Empty(String),

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for failures of an iterative linear solve.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}
