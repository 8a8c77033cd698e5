//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point that was required to be strictly interior is on or outside the boundary.
    #[error("infeasible point: {0}")]
    InfeasiblePoint(String),

    /// A constraint set has an empty (or numerically empty) interior.
    #[error("infeasible domain: {0}")]
    InfeasibleDomain(String),

    /// A ray from an interior point never meets a constraint surface.
    #[error("no intersection: ray leaves the constraint set unbounded")]
    NoIntersection,

    /// An operation was asked to run on a domain kind it does not support.
    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    /// Cholesky factorisation of the barrier metric failed.
    #[error("degenerate metric at interior point")]
    DegenerateMetric,

    /// The geodesic-random-walk retraction could not find an interior point.
    #[error("step failure: retraction exhausted {0} halvings")]
    StepFailure(usize),

    /// A reflected step exceeded the bounce budget.
    #[error("runaway reflection: more than {0} boundary hits in one step")]
    RunawayReflection(usize),

    /// An operation received an empty batch or sample set.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A statistic needs more samples than were provided.
    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    /// Training produced a non-finite loss.
    #[error("divergence failure: non-finite loss at iteration {iteration}")]
    DivergenceFailure { iteration: usize },

    /// A checkpoint was applied to a domain other than the one it was trained on.
    #[error("model/domain mismatch: checkpoint hash {expected} vs domain hash {got}")]
    ModelDomainMismatch { expected: String, got: String },

    /// Vector or sample-set dimensions disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Malformed file contents (CSV, checkpoint, domain JSON).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs or
    /// configuration. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::InfeasiblePoint(_)
                | Error::NoIntersection
                | Error::DegenerateMetric
                | Error::StepFailure(_)
                | Error::RunawayReflection(_)
                | Error::DivergenceFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
