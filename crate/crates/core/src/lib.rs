//! Cooperative internal and collective spin squeezing.
//!
//! The crate models an ensemble of spin-`F` atoms whose single-atom (qudit)
//! state is squeezed by one-axis twisting and whose collective spin is then
//! squeezed by stroboscopic quantum-nondemolition (QND) probing.
//!
//! * [`qudit`]: single-atom spin algebra, twisting, rotations and the
//!   |↑⟩/|↓⟩ construction;
//! * [`gaussian`]: Gaussian moments of the collective quadratures under QND
//!   conditioning, Larmor rotation and decay, plus the squeezing metrics;
//! * [`oracle`]: brute-force tensor-product simulation of a few atoms;
//! * [`protocol`]: the pulse-sequence interpreter (analytic and Monte Carlo);
//! * [`optimize`]: grid plus golden-section search.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod gaussian;
pub mod numeric;
pub mod optimize;
pub mod oracle;
pub mod protocol;
pub mod qudit;

pub use gaussian::{
    conditional_variance_three_pulse, conditional_variance_two_pulse, decay_channel,
    ensemble_from_internal, ensemble_from_moments, larmor_rotate, qnd_condition, qnd_update,
    scattering_limit, scattering_noise, wineland_xi2, xi2_qnd, xi2_tot, Backaction,
    GaussianEnsemble, GaussianError, QndCoupling, Retrodiction, SqueezingBracket, SqueezingReport,
};
pub use optimize::{
    find_optimal_oat, minimize, optimize, OptimizationProblem, OptimizationResult, OptimizeError,
    ParameterBound,
};
pub use oracle::{
    apply_outcome_zero_kraus, collective_operator, gaussian_equivalence, pair_excitation_check,
    product_state, variance_formula_check, ManyBodyState, OracleError, WeakMeasurementParams,
};
pub use protocol::{
    rotation_angle_deg, rotation_angle_scan, run_analytic, run_monte_carlo, sweep, DecayBasis,
    DutyCycleModel, EngineConfig, MeasurementRecord, Mode, ModelFlags, Parameter, ProbeWindow,
    ProtocolError, PulseSequence, SweepRow, ThetaReference,
};
pub use qudit::{
    displaced_rotation_angle, hermitian_propagator, make_spin_operators, make_up_down,
    mean_spin_response, oat_evolve, optimal_internal_quadrature, quadrature_variance, rotate_x,
    InternalMoments, InternalStatePair, MeanSpinResponse, OatParams, QuditError, QuditState,
    RotationDenominator, Spin, SpinOperators,
};

/// Metrological gain in decibels, `10·log10(x)`.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Inverse of [`to_db`].
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
