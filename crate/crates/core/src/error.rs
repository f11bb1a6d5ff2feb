use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ambiguous clustering: cluster span {span:e} exceeds width {delta:e}")]
    AmbiguousClustering { span: f64, delta: f64 },

    #[error("no rate defined at Bohr frequency {omega}")]
    MissingRate { omega: f64 },

    #[error("time {t} exceeds the near-degenerate validity horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("short-time expansion invalid: t*|L| = {0:e} > 0.01")]
    ExpansionInvalid(f64),

    #[error("diagonalization failure: {0}")]
    DiagonalizationFailure(String),

    #[error("identity `{identity}` violated at t = {t}: analytic {analytic:e}, numeric {numeric:e}")]
    IdentityViolation {
        identity: String,
        t: f64,
        analytic: f64,
        numeric: f64,
    },

    #[error("ratio undefined: denominator {0:e}")]
    RatioUndefined(f64),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("witness not found: {0}")]
    WitnessNotFound(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("dimension {dim} exceeds budget {budget}")]
    DimensionBudget { dim: usize, budget: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
