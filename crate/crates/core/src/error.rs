//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::stepper::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("dangling reference at {path}: bus {bus} does not exist")]
    DanglingBus { path: String, bus: usize },

    #[error("zero series impedance at {path}")]
    ZeroImpedance { path: String },

    #[error("unknown disturbance target: {0}")]
    UnknownTarget(String),

    #[error("singular stator matrix (det = {det})")]
    SingularStator { det: f64 },

    #[error("profile time {t} outside [0, {h}]")]
    ProfileTime { t: f64, h: f64 },

    #[error("step size {h} s exceeds surrogate limit h_max = {h_max} s")]
    StepTooLarge { h: f64, h_max: f64 },

    #[error("surrogate input `{name}` = {value} outside trained domain [{lo}, {hi}]")]
    OutOfDomain {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "Newton-Raphson did not converge in {iterations} iterations \
         (last update {last_update:e}, residual {residual:e})"
    )]
    NotConverged {
        iterations: usize,
        last_update: f64,
        residual: f64,
    },

    #[error("singular Jacobian: pivot {pivot} is {value:e}")]
    SingularJacobian { pivot: usize, value: f64 },

    #[error("self-check failed for {what}: deviation {deviation:e} exceeds {tolerance:e}")]
    SelfCheck {
        what: &'static str,
        deviation: f64,
        tolerance: f64,
    },

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time grids do not match: {0}")]
    GridMismatch(String),

    #[error("simulation aborted at t = {t} s after {steps} accepted steps: {source}")]
    Aborted {
        t: f64,
        steps: usize,
        partial: Box<Trajectory>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::DanglingBus { .. } => "dangling-reference",
            Error::ZeroImpedance { .. } => "zero-impedance",
            Error::UnknownTarget(_) => "unknown-target",
            Error::SingularStator { .. } => "singular-stator",
            Error::ProfileTime { .. } => "profile-time",
            Error::StepTooLarge { .. } => "step-too-large",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::Dimension(_) => "dimension",
            Error::NotConverged { .. } => "not-converged",
            Error::SingularJacobian { .. } => "singular-jacobian",
            Error::SelfCheck { .. } => "self-check",
            Error::WeightFile(_) => "weight-file",
            Error::Config(_) => "config",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::Aborted { .. } => "aborted",
            Error::Io(_) => "io",
            Error::Json(_) => "parse",
        }
    }
}
