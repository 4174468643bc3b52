use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulation and analysis kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice: invalid size: {0}")]
    InvalidSize(String),

    #[error("lattice: graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("{context}: {message}")]
    Validation { context: &'static str, message: String },

    #[error("fock: invalid sector: {particles} particles on {sites} sites")]
    InvalidSector { sites: usize, particles: usize },

    #[error("{context}: dimension mismatch (expected {expected}, got {actual})")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("dynamics: eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("dynamics: krylov step failed at t={t}: {message}")]
    KrylovStep { t: f64, message: String },

    #[error("dynamics: observer {index} failed at t={t}: {source}")]
    Observer { index: usize, t: f64, source: Box<Error> },

    #[error("wannier: resolution error: {0}")]
    Resolution(String),

    #[error("wannier: ill-conditioned packet overlap (minimum Gram eigenvalue {min_eigenvalue:e})")]
    Conditioning { min_eigenvalue: f64 },

    #[error("wannier: level {level} leakage {leakage:e} exceeds tolerance {tolerance:e}; enlarge the cell window")]
    WindowTooSmall { level: usize, leakage: f64, tolerance: f64 },

    #[error("entropy: projected enumeration cost {cost:e} exceeds budget {budget:e}; use a smaller window or a larger prune threshold")]
    EnumerationCost { cost: f64, budget: f64 },

    #[error("entropy: invalid probability: {0}")]
    InvalidProbability(String),

    #[error("analysis: degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("analysis: fit failed after {iterations} iterations ({reason}); initial A={initial_amplitude}, omega={initial_rate}")]
    FitFailure { reason: String, iterations: usize, initial_amplitude: f64, initial_rate: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn validation(context: &'static str, message: impl Into<String>) -> Self {
        Error::Validation { context, message: message.into() }
    }

    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSize(_)
                | Error::Disconnected { .. }
                | Error::Validation { .. }
                | Error::InvalidSector { .. }
                | Error::DimensionMismatch { .. }
                | Error::Parse(_)
        )
    }
}
