use alloc::string::String;

use crate::spectrum::LorentzianFit;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate rate: {0} must be positive")]
    DegenerateRate(&'static str),

    #[error("output power must be positive, got {0} W")]
    NonPositivePower(f64),

    #[error("no population inversion: N_e = {excited}, N_g = {ground}")]
    NoInversion { excited: f64, ground: f64 },

    #[error("step size underflow at t = {t:e} s")]
    StepSizeUnderflow { t: f64 },

    #[error("step budget of {steps} exhausted at t = {t:e} s")]
    StepBudget { steps: usize, t: f64 },

    #[error("computation interrupted at t = {t:e} s")]
    Interrupted { t: f64 },

    #[error("inversion left [-1, 1]: sigma_z = {sigma_z} at t = {t:e} s")]
    InvariantViolation { t: f64, sigma_z: f64 },

    #[error("no convergence: residual {residual:e} after integrating {time:e} s")]
    NoConvergence { residual: f64, time: f64 },

    #[error("state is not steady: scaled residual {residual:e}")]
    NotSteady { residual: f64 },

    #[error("sampling step {dt:e} s does not resolve the dominant rate {rate:e} rad/s")]
    Resolution { dt: f64, rate: f64 },

    #[error("spectrum has {points} points in the half-maximum region, need at least {required}")]
    SpectralResolution { points: usize, required: usize },

    #[error("correlation tail {tail:e} of the peak exceeds the truncation limit")]
    InsufficientDecay { tail: f64 },

    #[error("regression system does not decay: eigenvalue real part {re:e}")]
    UnstableRegression { re: f64 },

    #[error("correlation is identically zero")]
    EmptyCorrelation,

    #[error("Lorentzian fit did not converge (rms residual {residual:e})")]
    FitNonConvergence { best: LorentzianFit, residual: f64 },

    #[error("spectrum is not a single Lorentzian (rms residual {residual:e})")]
    NotLorentzian { best: LorentzianFit, residual: f64 },

    #[error("memory cap exceeded: {required} elements required, cap is {cap}")]
    MemoryCap { required: usize, cap: usize },

    #[error("density matrix lost positivity: min eigenvalue {min_eigenvalue:e}")]
    Positivity { min_eigenvalue: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    Budget { cells: usize, budget: usize },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
