use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("tail integral diverges: exponent {exponent} <= 1")]
    DivergingTail { exponent: f64 },

    #[error("point {0:?} coincides with the barrier singularity")]
    SingularPoint(Vec<f64>),

    #[error("gluing infeasible: {0}")]
    GluingInfeasible(String),

    #[error("alpha search failed: {0}")]
    SearchFailed(String),

    #[error("domain too tight: {0}")]
    DomainTooTight(String),

    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("asymptotic regime not reached: {0}")]
    AsymptoticsNotReached(String),

    #[error("level {level} out of range: {reason}")]
    LevelOutOfRange { level: f64, reason: String },

    #[error("critical point: |Du| = {grad_norm:e} below floor")]
    CriticalPoint { grad_norm: f64 },

    #[error("inconclusive at this resolution: gap {gap:e} <= {threshold:e}")]
    Inconclusive { gap: f64, threshold: f64 },

    #[error("non-positive curvature K = {k:e} at {point:?}")]
    NonPositiveCurvature { k: f64, point: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}
