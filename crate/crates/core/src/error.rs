use thiserror::Error;

use crate::model::RegionCode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid region code {code} for this model: {reason}")]
    InvalidRegion { code: String, reason: String },

    #[error("singular Jacobian in region {0} (|det| below tolerance)")]
    SingularJacobian(RegionCode),

    #[error("no self-consistent predecessor found (bit-flip depth {depth} exhausted)")]
    PredecessorNotFound { depth: usize },

    #[error("eigenbasis is degenerate beyond Jordan handling")]
    DegenerateBasis,

    #[error("composed affine system is singular for the given region sequence")]
    NoCandidate,

    #[error("marginal eigenvalue with modulus {0}")]
    Marginal(f64),

    #[error("cycle is not a saddle")]
    NotSaddle,

    #[error("requested side has no eigendirections")]
    EmptySide,

    #[error("map is not invertible: D_L * D_R = {0}")]
    NotInvertible(f64),

    #[error("eigenvalue one: {0}")]
    EigenvalueOne(String),

    #[error("repeated eigenvalues")]
    RepeatedEigenvalues,

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("eigenline does not reach the border")]
    NoBorderHit,

    #[error("degenerate point set: rank {rank} below required {required}")]
    DegeneratePca { rank: usize, required: usize, points: Vec<Vec<f64>> },

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize, partial: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
