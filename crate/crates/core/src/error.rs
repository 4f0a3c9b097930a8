use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("law does not have a power-law tail (no (D, alpha) available)")]
    AssumptionNotSatisfied,

    #[error("law validation failed: {}", .0.join("; "))]
    ValidationFailure(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("free-energy residual does not change sign on (0, {beta}]")]
    NoBracket { beta: f64 },

    #[error("free-energy residual {residual:e} exceeds tolerance {tol:e}")]
    ToleranceNotMet { residual: f64, tol: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("horizon {horizon} exceeds the memory budget of {limit}")]
    ResourceLimit { horizon: usize, limit: usize },

    #[error("renewal mass u({0}) is zero; the horizon is unreachable")]
    DegenerateHorizon(usize),

    #[error("brute-force enumeration supports N <= {limit}, got {horizon}")]
    TooLarge { horizon: usize, limit: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("could not parse law specification `{spec}`: {reason}")]
    LawSpec { spec: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::ValidationFailure(_)
                | Error::LawSpec { .. }
                | Error::Domain(_)
                | Error::AssumptionNotSatisfied
                | Error::TooLarge { .. }
        )
    }
}
