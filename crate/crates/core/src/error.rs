use thiserror::Error;

use crate::dihrnn::MinedCoefficients;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch { what: &'static str, expected: usize, found: usize },

    #[error("state diverged (non-finite value) at step {step}")]
    Divergence { step: usize },

    #[error("sample period {tau} exceeds the Euler step bound {bound} (psi = {psi})")]
    StepBound { tau: f64, bound: f64, psi: f64 },

    #[error(
        "mining did not converge after {} epochs (distance {} >= upsilon {upsilon})",
        .best.report.epochs,
        .best.report.distance
    )]
    NonConvergence { best: Box<MinedCoefficients>, upsilon: f64 },

    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference coefficient `{name}` is zero; relative deviation is undefined")]
    ZeroReference { name: String },

    #[error("coefficient structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("index {index} out of range (valid: 0..{len})")]
    OutOfRange { index: usize, len: usize },

    #[error("fault spec out of range: {0}")]
    FaultRange(String),

    #[error("controller diverged at t = {t}")]
    ControllerDivergence { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by numerical trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. }
            | Error::StepBound { .. }
            | Error::NonConvergence { .. }
            | Error::ControllerDivergence { .. } => true,
            Error::Window { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
