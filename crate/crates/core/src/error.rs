use thiserror::Error;

/// Errors raised anywhere in the roll-wave pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state outside the model domain: {0}")]
    Domain(String),

    #[error("integration failed at x = {at}: {reason}")]
    Integration { at: f64, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("shooting Jacobian is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("no admissible Hopf point")]
    NoHopf,

    #[error("continuation step size underflow at X = {period}")]
    PathLost { period: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("time stepping failed at t = {t}: {reason}")]
    Simulation { t: f64, reason: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("malformed data: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
