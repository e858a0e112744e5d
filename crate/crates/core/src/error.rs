use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polar singularity: cos(lat) = {0:e}")]
    PolarSingularity(f64),
    #[error("gimbal lock: |C31| = {0}")]
    GimbalLock(f64),
    #[error("ill-conditioned matrix in {context}: condition number {condition:e}")]
    IllConditioned {
        context: &'static str,
        condition: f64,
    },
    #[error("innovation window not full ({filled}/{capacity})")]
    WindowNotFull { filled: usize, capacity: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("infeasible maneuver: {0}")]
    InfeasibleManeuver(String),
    #[error("{path}: malformed header: expected `{expected}`, found `{found}`")]
    MalformedHeader {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: non-monotonic time at line {line}")]
    NonMonotonicTime { path: String, line: usize },
    #[error("{path}: sample rate {measured:.3} Hz violates expected {expected} Hz")]
    RateViolation {
        path: String,
        measured: f64,
        expected: f64,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::PolarSingularity(_)
                | Error::GimbalLock(_)
                | Error::IllConditioned { .. }
                | Error::NonFinite(_)
        )
    }
}
