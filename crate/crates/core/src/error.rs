use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("steady state undefined: ionization and recombination rates are both zero")]
    UndefinedSteadyState,

    #[error("divergence: {0}")]
    Divergence(&'static str),

    /// Composite Simpson refinement hit the panel cap before reaching tolerance.
    #[error("quadrature did not converge: relative change {achieved:e} after {panels} panels")]
    Quadrature { achieved: f64, panels: usize },

    #[error("threshold unreachable: per-attempt success probability {0:e} underflows")]
    UnreachableThreshold(f64),

    #[error("undefined SNR: {0}")]
    UndefinedSnr(&'static str),

    #[error("controller exceeded the attempt budget of {0}")]
    AttemptBudget(u64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of a numerical procedure rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature { .. } | Error::AttemptBudget(_) | Error::UnreachableThreshold(_)
        )
    }
}
