use thiserror::Error;

/// Errors raised by the library. Validation problems with a domain are
/// reported as data by [`crate::domain::validate_domain`]; the variants here
/// are for operations that cannot proceed.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("time {0} outside the strip")]
    TimeOutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("mass mismatch on interval {interval}: expected {expected} particles, found {found}")]
    MassMismatch { interval: usize, expected: i64, found: i64 },

    #[error("infeasible creation at t={t}: position {x} already occupied")]
    InfeasibleCreation { t: String, x: String },

    #[error("particle count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),

    #[error("unsupported domain: {0}")]
    Unsupported(String),

    #[error("capacity exceeded at level {level}: {states} states (cap {cap})")]
    Capacity { level: i64, states: usize, cap: usize },

    #[error("stuck configuration: every jump vector has zero weight")]
    Stuck,

    #[error("no feasible tiling: {0}")]
    NoTiling(String),

    #[error("invalid density triple: {0}")]
    InvalidTriple(String),

    #[error("angle {0} outside [0, pi]")]
    AngleOutOfRange(f64),

    #[error("frozen node at ({0}, {1})")]
    FrozenNode(f64, f64),

    #[error("infeasible boundary data: {0}")]
    InfeasibleBoundary(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("pole collision at z = {0}")]
    PoleCollision(String),

    #[error("contour passes too close to a singularity: {0}")]
    Contour(String),

    #[error("infinite characteristic speed (f = -1)")]
    InfiniteSpeed,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Capacity and convergence failures are resource problems rather than
    /// bad input; callers map them to a different exit status.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::Capacity { .. } | Error::Convergence(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
