use thiserror::Error;

use crate::spamloop::Corner;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("3x3 matrix is singular or ill-conditioned (det {det:e}, condition {condition:e})")]
    Singular { det: f64, condition: f64 },

    #[error("corner {corner} of the loop matrix is singular or ill-conditioned")]
    SingularCorner { corner: Corner },

    #[error("probability {value} is outside [0, 1]")]
    InvalidProbability { value: f64 },

    #[error("invalid density matrix: {reason}")]
    InvalidState { reason: String },

    #[error("invalid settings plan: {reason}")]
    InvalidPlan { reason: String },

    #[error("cheat rule references invalid setting pair ({alice}, {bob})")]
    InvalidRule { alice: usize, bob: usize },

    #[error("count record is empty")]
    EmptyRecord,

    #[error("need at least 2 usable trials, got {usable} ({excluded} excluded as singular)")]
    InsufficientTrials { usable: usize, excluded: usize },

    #[error("measurement design is degenerate: {side} Bloch vectors do not span three dimensions")]
    DegenerateDesign { side: &'static str },

    #[error("detection threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
