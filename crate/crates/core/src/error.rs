use thiserror::Error;

pub type Result<T> = std::result::Result<T, PxgError>;

#[derive(Debug, Error)]
pub enum PxgError {
    /// Cholesky factorization broke down at the given (1-based) leading minor.
    #[error("matrix is not positive definite: leading minor {minor} is not positive")]
    NotPositiveDefinite { minor: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("precision entry ({s}, {t}) = {value:e} is non-zero but the edge is absent")]
    GraphIncompatible { s: usize, t: usize, value: f64 },

    #[error("graph is not decomposable")]
    NotDecomposable,

    #[error("G-Wishart completion did not converge after {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("numerical overflow in normalizing-constant estimate: {detail}")]
    Overflow { detail: String },

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("every allocation probability for observation {row} is zero")]
    DegenerateAllocation { row: usize },

    #[error("unknown backend '{0}'")]
    UnknownBackend(String),

    #[error("backend '{backend}' cannot operate on a {found} cluster state")]
    BackendMismatch { backend: String, found: &'static str },

    #[error("covariate-only DIC needs a pooled single-graph trace; run `fit --pooled` on the same data and pass it with --pooled-trace")]
    MissingPooledTrace,

    #[error("trace format error: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PxgError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PxgError::InvalidParameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        PxgError::Dimension(msg.into())
    }
}
