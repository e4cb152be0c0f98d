use thiserror::Error;

use crate::plant::NeutralStabilityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("system matrix is not neutrally stable (max real part {:.3e}, semisimplicity defect {})",
        .0.max_real_part, .0.semisimplicity_defect)]
    NotNeutrallyStable(Box<NeutralStabilityReport>),

    #[error("matrix is not skew-symmetric (residual {residual:.3e})")]
    NotSkewSymmetric { residual: f64 },

    #[error("pair (C, A) is not observable")]
    Unobservable,

    #[error("joint connectivity not certified on window [{start}, {end}): fiedler value {fiedler:.3e}")]
    JointConnectivityViolation { start: f64, end: f64, fiedler: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal consistency check failed: {0}")]
    Certification(String),

    #[error("pole placement failed for agent {agent}: {reason}")]
    Placement { agent: usize, reason: String },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("integration diverged after t = {last_time}")]
    Divergence { last_time: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
