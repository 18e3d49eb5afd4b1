//! Pulse-sequence interpreter: analytic moment chain, Monte Carlo
//! sampling, sweeps and calibration of the default constants.

mod calibrate;
mod engine;
mod monte_carlo;
mod sequence;
mod sweep;

use thiserror::Error;

use crate::gaussian::GaussianError;
use crate::qudit::QuditError;

pub use calibrate::{
    calibrate_defaults, calibrate_degradation_floor, calibrate_residual_ratio,
    calibrate_window_kappa2, Calibration, CALIBRATION_DUTY_CYCLE, MU_RANGE, TARGET_PUMP_EXCESS,
    TARGET_THREE_PULSE_QND_DB, TARGET_TWO_PULSE_QND_DB, TARGET_XI2_NL_DB,
};
pub use engine::{
    build_chain, build_chain_with, effective_degradation, internal_stage, pump_excess_noise,
    pump_weights, reference_sequence, run_analytic, run_analytic_with, twist_stage, Chain,
    InternalStage, PreparedTwist, TwistStage,
};
pub use monte_carlo::{
    child_seed, estimate, run_monte_carlo, sample_chain, Estimate, MeasurementRecord,
    MonteCarloRun, SampleSummary, MIN_CYCLES,
};
pub use sequence::*;
pub use sweep::{rotation_angle_deg, rotation_angle_scan, sweep, Parameter, SweepPoint, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid sequence field `{field}`: {reason}")]
    InvalidSequence { field: String, reason: String },
    #[error("{stage}: {source}")]
    Qudit {
        stage: String,
        #[source]
        source: QuditError,
    },
    #[error("{stage}: {source}")]
    Gaussian {
        stage: String,
        #[source]
        source: GaussianError,
    },
    #[error("{mode:?} needs {needed} probe windows, the sequence has {available}")]
    WindowCount {
        mode: Mode,
        needed: usize,
        available: usize,
    },
    #[error("Monte Carlo needs at least {min} cycles, got {got}")]
    TooFewCycles { min: usize, got: usize },
    #[error("the estimated window has zero coupling, its Jz is not observable")]
    UnresolvableTarget,
    #[error("outcome covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
}
