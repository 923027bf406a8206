use thiserror::Error;

use crate::ode::Trajectory;

/// Failures raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("parameter {value} outside the admissible range [{lo}, {hi}] for `{system}`")]
    ParamOutOfRange {
        system: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: IntegrationFailure,
        partial: Box<Trajectory>,
    },

    #[error("point {point:?} is not on manifold `{manifold}` (residual {residual:e})")]
    OffManifold {
        manifold: &'static str,
        point: Vec<f64>,
        residual: f64,
    },

    #[error("frame is not invariant: tangency residual {0:e} exceeds threshold")]
    FrameNotInvariant(f64),

    #[error("no return to the section within the time budget")]
    NoReturn,

    #[error("Newton iteration did not converge (last residual {residual:e}, last iterate {iterate:?})")]
    NewtonDiverged { residual: f64, iterate: Vec<f64> },

    #[error("trivial Floquet multiplier {0} deviates from 1")]
    TrivialMultiplier(f64),

    #[error("Floquet rate mismatch: monodromy gives {monodromy}, divergence integral gives {divergence}")]
    FloquetMismatch { monodromy: f64, divergence: f64 },

    #[error("branch contains no fold")]
    NoFold,

    #[error("bracket endpoints do not straddle a transition: {0}")]
    NoStraddle(String),

    #[error("orbit classification unresolved (terminal alpha {0})")]
    Unresolved(f64),

    #[error("non-finite matrix entries")]
    NonFiniteMatrix,
}

/// Reason attached to [`Error::Integration`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationFailure {
    MaxSteps,
    StepUnderflow,
    NonFinite,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IntegrationFailure::MaxSteps => write!(f, "step budget exhausted"),
            IntegrationFailure::StepUnderflow => write!(f, "step size underflow"),
            IntegrationFailure::NonFinite => write!(f, "non-finite state"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
