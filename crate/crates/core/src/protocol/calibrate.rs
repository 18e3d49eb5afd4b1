//! Root-finding helpers that fix the default sequence constants.
//!
//! The defaults in [`super::sequence`] were produced by
//! [`calibrate_defaults`] and are frozen; tests check that they still hit
//! their targets.

use serde::Serialize;

use super::engine::{build_chain, pump_excess_noise, reference_sequence};
use super::sequence::{EngineConfig, Mode, PulseSequence};
use super::ProtocolError;
use crate::numeric::bisect;
use crate::optimize::find_optimal_oat;
use crate::qudit::{Spin, SpinOperators};
use crate::to_db;

/// Excess noise of the pumped state.
pub const TARGET_PUMP_EXCESS: f64 = 0.07;
/// Internal squeezing at the calibration duty cycle, dB.
pub const TARGET_XI2_NL_DB: f64 = -1.02;
pub const CALIBRATION_DUTY_CYCLE: f64 = 0.1;
/// Two-pulse QND squeezing of the untwisted state, dB.
pub const TARGET_TWO_PULSE_QND_DB: f64 = -2.83;
/// Three-pulse QND squeezing of the untwisted state, dB.
pub const TARGET_THREE_PULSE_QND_DB: f64 = -5.10;
/// Search range for the twisting phase.
pub const MU_RANGE: (f64, f64) = (0.0, 1.5);

const TOL: f64 = 1e-13;

fn failed(what: &str) -> ProtocolError {
    ProtocolError::CalibrationFailed(what.to_string())
}

/// `p(ψ_2)/p(ψ_1)` giving `target_excess` at the given polarization.
pub fn calibrate_residual_ratio(
    spin: Spin,
    polarization: f64,
    target_excess: f64,
) -> Result<f64, ProtocolError> {
    let ops = SpinOperators::new(spin);
    bisect(
        |r| pump_excess_noise(&ops, polarization, r) - target_excess,
        0.0,
        100.0,
        TOL,
    )
    .ok_or_else(|| failed("pump excess noise target not bracketed by residual ratios in [0, 100]"))
}

/// Degradation floor of the duty-cycle model such that the best internal
/// squeezing at `duty_cycle` equals `target_db`. Returns `(floor, μ*)`.
pub fn calibrate_degradation_floor(
    seq: &PulseSequence,
    engine: &EngineConfig,
    duty_cycle: f64,
    target_db: f64,
) -> Result<(f64, f64), ProtocolError> {
    let mut s = seq.clone();
    s.w1.duty_cycle = duty_cycle;
    s.w1.degradation = None;
    let best = |floor: f64| {
        let mut e = *engine;
        e.flags.duty_cycle_model.floor = floor;
        find_optimal_oat(MU_RANGE, &s, &e)
    };
    let ceiling = engine.flags.duty_cycle_model.ceiling;
    let floor = bisect(
        |f| best(f).map_or(f64::NAN, |(_, db)| db - target_db),
        0.0,
        ceiling,
        TOL,
    )
    .ok_or_else(|| failed("internal squeezing target not bracketed by degradation floors"))?;
    let (mu, _) = best(floor).map_err(|e| failed(&e.to_string()))?;
    Ok((floor, mu))
}

/// Strength of window `window` such that the untwisted sequence reaches
/// `target_db` in `mode`.
pub fn calibrate_window_kappa2(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
    window: usize,
    target_db: f64,
) -> Result<f64, ProtocolError> {
    if window >= seq.windows.len() {
        return Err(failed("window index out of range"));
    }
    let base = reference_sequence(seq);
    let db = |k: f64| {
        let mut s = base.clone();
        s.windows[window].kappa2 = k;
        build_chain(&s, engine, mode).map_or(f64::NAN, |c| to_db(c.xi2_cond) - target_db)
    };
    bisect(db, 0.0, 1e3, TOL)
        .ok_or_else(|| failed("QND target not bracketed by window strengths in [0, 1000]"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub residual_ratio: f64,
    pub degradation_floor: f64,
    pub mu: f64,
    pub kappa2_w21: f64,
    pub kappa2_w23: f64,
}

/// Recomputes the frozen defaults from their targets, starting from the
/// default sequence and engine.
pub fn calibrate_defaults() -> Result<Calibration, ProtocolError> {
    let engine = EngineConfig::default();
    let mut seq = PulseSequence::default();
    let residual_ratio =
        calibrate_residual_ratio(engine.spin, seq.pump.polarization, TARGET_PUMP_EXCESS)?;
    seq.pump.residual_ratio = residual_ratio;
    let (floor, mu) =
        calibrate_degradation_floor(&seq, &engine, CALIBRATION_DUTY_CYCLE, TARGET_XI2_NL_DB)?;
    seq.w1.mu = mu;
    let kappa2_w21 =
        calibrate_window_kappa2(&seq, &engine, Mode::TwoPulse, 0, TARGET_TWO_PULSE_QND_DB)?;
    seq.windows[0].kappa2 = kappa2_w21;
    let kappa2_w23 = calibrate_window_kappa2(
        &seq,
        &engine,
        Mode::ThreePulse,
        2,
        TARGET_THREE_PULSE_QND_DB,
    )?;
    Ok(Calibration {
        residual_ratio,
        degradation_floor: floor,
        mu,
        kappa2_w21,
        kappa2_w23,
    })
}
