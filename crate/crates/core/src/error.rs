use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("matrix is not skew-symmetric (|A + Aᵀ| = {0:.3e})")]
    NotSkewSymmetric(f64),
    #[error("matrix is not a rotation (|RRᵀ - I| = {ortho:.3e}, det = {det})")]
    NotRotation { ortho: f64, det: f64 },
    #[error("inertia is not physically consistent: {0}")]
    BadInertia(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("link `{link}`: {source}")]
    Inertia { link: String, source: SpatialError },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoupledError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("duplicate contact on agent {agent} frame `{frame}`")]
    DuplicateContact { agent: usize, frame: String },
    #[error("no grasp contacts")]
    NoGraspContacts,
    #[error("grasp map has full rank, no squeeze space")]
    FullRank,
    #[error("invalid contact: {0}")]
    InvalidContact(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("closure violated: {0}")]
    ClosureViolation(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("contact configuration is near-singular (σ = {sigma:.3e} relative to σmax)")]
    SingularContacts { sigma: f64 },
    #[error("force optimization infeasible: {0}")]
    Infeasible(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgonomicsError {
    #[error("no wrench distribution balances gravity within the contact limits")]
    StaticallyInfeasible,
    #[error("posture problem infeasible: {0}")]
    Infeasible(String),
    #[error("closure violated: {0}")]
    ClosureViolation(String),
    #[error("invalid reference request: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("constraint system is singular")]
    SingularKkt,
    #[error("numerical divergence at t = {t:.4} s")]
    NumericalDivergence { t: f64 },
    #[error("phase `{phase}` ended with payload error {error:.3e} m, above its settle tolerance")]
    PhaseTimeout { phase: String, error: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Crate-level error used by file loading and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: parse error at line {line}, column {column}: {msg}")]
    Parse { path: PathBuf, line: usize, column: usize, msg: String },
    #[error("{path}:{line}: invariant violation in `{field}`: {msg}")]
    Invariant { path: PathBuf, line: usize, field: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coupled(#[from] CoupledError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Ergonomics(#[from] ErgonomicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    /// Bad command-line arguments.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Process exit code: 1 validation, 2 solver, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Invariant { .. } | Error::Model(_) | Error::Coupled(_) | Error::Usage(_) => 1,
            Error::Control(ControlError::InvalidGains(_)) => 1,
            Error::Control(_) | Error::Ergonomics(_) | Error::Sim(_) => 2,
            Error::Io { .. } => 3,
            Error::Other(_) => 2,
        }
    }
}
