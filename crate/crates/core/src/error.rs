use thiserror::Error;

pub type Result<T> = std::result::Result<T, LgcpError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LgcpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {index} at ({x}, {y}) lies outside the domain {domain}")]
    PointOutsideDomain {
        index: usize,
        x: f64,
        y: f64,
        domain: String,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(
        "torus embedding (m = {m}) is not positive semi-definite: eigenvalue {min_eigenvalue:e} \
         against largest {max_eigenvalue:e}; use a larger extended grid or a shorter-range correlation"
    )]
    NotPositiveSemidefinite {
        m: usize,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("spectral operator {0} is not available for this correlation family")]
    UnsupportedOperator(&'static str),

    #[error("intensity overflow in cell {cell}: log-intensity {log_intensity}")]
    IntensityOverflow { cell: usize, log_intensity: f64 },

    #[error("{what} is not positive definite; consider adding a small diagonal jitter explicitly")]
    NotPositiveDefinite { what: String },

    #[error("Newton iteration for cell {cell} did not converge (|f| = {residual:e} after {iterations} iterations)")]
    NewtonDivergence {
        cell: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("lower bound decreased by {drop:e} at iteration {iteration}")]
    ElboDecrease { iteration: usize, drop: f64 },

    #[error("optimizer did not converge after {iterations} iterations (objective {objective:e}, best {best:?})")]
    NoConvergence {
        iterations: usize,
        best: Vec<f64>,
        objective: f64,
    },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("no proposal accepted in the adaptation window starting at iteration {start} ({len} iterations); last step size {step_size:e}")]
    ZeroAcceptance {
        start: usize,
        len: usize,
        step_size: f64,
    },

    #[error("replicate count mismatch for method {method}: expected {expected}, got {got}")]
    ReplicateMismatch {
        method: String,
        expected: usize,
        got: usize,
    },
}

impl LgcpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LgcpError::InvalidParameter(msg.into())
    }
}
