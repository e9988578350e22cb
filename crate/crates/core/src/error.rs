use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin sector: {0}")]
    InvalidSector(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("steady state is not unique: {count} singular values below {tolerance:e}")]
    NonUniqueSteadyState { count: usize, tolerance: f64 },

    #[error("biorthonormalization failed: residual {residual:e} exceeds {tolerance:e}")]
    Biorthonormalization { residual: f64, tolerance: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigensolver(String),

    #[error("correlation model inconsistent: model C(0) = {model}, direct C(0) = {direct}")]
    CorrelationMismatch { model: f64, direct: f64 },

    #[error("divergent rate: mode with decay {gamma:e} carries amplitude {amplitude:e}")]
    DivergentRate { gamma: f64, amplitude: f64 },

    #[error("horizon too short: |C(T)| = {tail:e} exceeds tail tolerance {tolerance:e} at T = {horizon}")]
    HorizonTooShort { horizon: f64, tail: f64, tolerance: f64 },

    #[error("quadrature did not converge: estimated error {error:e} after {panels} panels")]
    Quadrature { error: f64, panels: usize },

    #[error("propagation failed: residual {0:e}")]
    Propagation(f64),

    #[error("derivative is not traceless: Tr[drho] = {0:e}")]
    InconsistentDerivative(f64),

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("step size too large: jump probability {probability} per step at t = {time}")]
    StepSize { probability: f64, time: f64 },

    #[error("integrator failure at t = {time}: minimum eigenvalue {min_eigenvalue:e} (trajectory {trajectory})")]
    Integrator {
        time: f64,
        min_eigenvalue: f64,
        trajectory: u64,
    },

    #[error("unstable filter: |score| = {score:e} at t = {time} (trajectory {trajectory})")]
    UnstableFilter {
        score: f64,
        time: f64,
        trajectory: u64,
        dump: Vec<(f64, f64)>,
    },

    #[error("rate window starts too early: quadratic term {curvature:e} is {sigmas:.1} sigma from zero")]
    WindowTooEarly { curvature: f64, sigmas: f64 },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailure { iterations: usize, reason: String },

    #[error("mode tracking ambiguous between N = {from} and N = {to}: candidates {candidates:?}")]
    TrackingAmbiguity {
        from: usize,
        to: usize,
        candidates: Vec<(f64, f64)>,
    },

    #[error("invalid baseline rate {0}")]
    InvalidBaseline(f64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSector(_) | Error::InvalidParameter { .. } | Error::InvalidSeries(_)
        )
    }
}
