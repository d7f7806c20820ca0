use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// Variants are grouped by the CLI exit code they map to; see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("impossible heralding event: {0}")]
    ImpossibleHeralding(String),

    #[error("impossible measurement outcome: {0}")]
    ImpossibleOutcome(String),

    #[error("divergent parameter: {0}")]
    DivergentParameter(String),

    #[error("grid truncation: estimated leaked mass {leaked:.3e} (boundary/peak ratio {ratio:.3e})")]
    Truncation { leaked: f64, ratio: f64 },

    #[error("Fock truncation leakage {leakage:.3e} exceeds {limit:.1e}; raise the dimension")]
    FockLeakage { leakage: f64, limit: f64 },

    #[error("unitarity defect {0:.3e}; raise the dimension")]
    UnitarityDefect(f64),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("unimodal state: {0}")]
    Unimodal(String),

    #[error("amplitude noise sigma_N = {sigma:.3e} too large for mean N_p = {mean:.3e} (requires sigma_N < N_p/4)")]
    TailMass { sigma: f64, mean: f64 },

    #[error("noise quadrature not converged: doubling nodes changed negativity by {relative_change:.3e}")]
    NodeConvergence { relative_change: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code: 2 config, 3 numeric, 4 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Validation(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
