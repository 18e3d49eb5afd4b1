//! Deterministic moment chain from pump to the squeezing report.
//!
//! Pump mixture → twisting (with degradation) → Larmor rotation → `N`
//! independent atoms → relaxation over W₁ and the gap → a linear-Gaussian
//! model of the window readouts `m_j = g_j·Jz(t_j) + n_j`. Between windows
//! `Jz` relaxes toward projection noise and picks up scattering and, when
//! probing is not stroboscopic, backaction noise. The figure of merit is the
//! conditional variance of `Jz` at window 2.

use nalgebra::{DMatrix, Matrix3};
use serde::Serialize;

use super::sequence::{DecayBasis, EngineConfig, Mode, PulseSequence, ThetaReference};
use super::ProtocolError;
use crate::gaussian::{
    conditional_variance_three_pulse, conditional_variance_two_pulse, decay_channel,
    ensemble_from_moments, qnd_condition, wineland_xi2, Backaction, QndCoupling, SqueezingReport,
};
use crate::qudit::{oat_evolve, InternalMoments, OatParams, QuditState, SpinOperators};
use crate::to_db;

/// Single-atom moments at the end of W₁ and after the gap rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalStage {
    /// Effective degradation after the duty-cycle model and decoherence.
    pub degradation: f64,
    /// Moments before the Larmor rotation.
    pub twisted: InternalMoments,
    /// Squeezed-quadrature angle of `twisted`.
    pub theta_star: f64,
    /// Rotation actually applied in the gap.
    pub rotation: f64,
    pub rotated: InternalMoments,
    /// `(F/|⟨fx⟩|)²`.
    pub shortening: f64,
}

/// Pump populations of `|ψ_0⟩, |ψ_1⟩, |ψ_2⟩` (fewer for `F < 1`).
pub fn pump_weights(ops: &SpinOperators, polarization: f64, residual_ratio: f64) -> Vec<f64> {
    let rest = 1.0 - polarization;
    match ops.dim() {
        0 | 1 => vec![1.0],
        2 => vec![polarization, rest],
        _ => {
            let p1 = rest / (1.0 + residual_ratio);
            vec![polarization, p1, rest - p1]
        }
    }
}

fn pump_mixture(ops: &SpinOperators, weights: &[f64], mu: f64) -> InternalMoments {
    let params = OatParams::ideal(mu);
    let parts: Vec<(f64, InternalMoments)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(alpha, &w)| {
            let psi: QuditState = oat_evolve(ops, &ops.x_state(alpha), &params);
            (w, InternalMoments::of_state(ops, &psi))
        })
        .collect();
    InternalMoments::mixture(&parts)
}

/// Excess transverse noise of the pumped state, Wineland-weighted:
/// `Var·(F/|⟨fx⟩|)² / (F/2) − 1`.
pub fn pump_excess_noise(ops: &SpinOperators, polarization: f64, residual_ratio: f64) -> f64 {
    let m = pump_mixture(ops, &pump_weights(ops, polarization, residual_ratio), 0.0);
    let spin = ops.spin();
    m.cov[(1, 1)] * m.shortening_factor(spin) / spin.css_variance() - 1.0
}

/// Effective degradation `1 − (1 − D(d))·e^{−γ|μ|}`.
pub fn effective_degradation(seq: &PulseSequence, engine: &EngineConfig) -> f64 {
    let base = seq
        .w1
        .degradation
        .unwrap_or_else(|| engine.flags.duty_cycle_model.degradation(seq.w1.duty_cycle));
    1.0 - (1.0 - base) * (-engine.flags.oat_decoherence * seq.w1.mu.abs()).exp()
}

/// Pump and twisting: the part of the internal stage that does not depend
/// on the gap, the windows or the decay settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistStage {
    pub degradation: f64,
    pub twisted: InternalMoments,
    pub theta_star: f64,
    pub shortening: f64,
}

/// Degradation interpolates the transverse covariance between the twisted
/// and the untwisted pump state; the mean spin keeps its twisted length.
pub fn twist_stage(
    seq: &PulseSequence,
    engine: &EngineConfig,
) -> Result<TwistStage, ProtocolError> {
    seq.validate()?;
    let ops = SpinOperators::new(engine.spin);
    let weights = pump_weights(&ops, seq.pump.polarization, seq.pump.residual_ratio);
    let mu = seq.w1.mu;
    let degradation = effective_degradation(seq, engine);
    let mut twisted = pump_mixture(&ops, &weights, mu);
    if degradation > 0.0 && mu != 0.0 {
        let untwisted = pump_mixture(&ops, &weights, 0.0);
        twisted.cov = twisted.cov * (1.0 - degradation) + untwisted.cov * degradation;
    }
    if twisted.mean.x.abs() < 1e-12 {
        return Err(ProtocolError::InvalidSequence {
            field: "w1.mu".into(),
            reason: "mean spin vanishes after twisting".into(),
        });
    }
    let (theta_star, _) = twisted.optimal_quadrature();
    Ok(TwistStage {
        degradation,
        twisted,
        theta_star,
        shortening: twisted.shortening_factor(engine.spin),
    })
}

impl TwistStage {
    /// Applies the gap rotation of `seq`.
    pub fn rotate(&self, seq: &PulseSequence, engine: &EngineConfig) -> InternalStage {
        let rotation = match engine.flags.theta_reference {
            ThetaReference::Larmor => seq.larmor_angle(),
            ThetaReference::SqueezingAxis => seq.larmor_angle() + self.theta_star,
        };
        InternalStage {
            degradation: self.degradation,
            twisted: self.twisted,
            theta_star: self.theta_star,
            rotation,
            rotated: self.twisted.rotated(rotation),
            shortening: self.shortening,
        }
    }
}

/// Internal part of the chain, see [`twist_stage`].
pub fn internal_stage(
    seq: &PulseSequence,
    engine: &EngineConfig,
) -> Result<InternalStage, ProtocolError> {
    Ok(twist_stage(seq, engine)?.rotate(seq, engine))
}

/// Everything the Monte Carlo sampler and the diagnostics need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chain {
    pub mode: Mode,
    pub n_windows: usize,
    pub pnl: f64,
    /// Unconditional `Var(Jz)` at each window in use.
    pub jz_var: Vec<f64>,
    /// Effective readout gains.
    pub gains: Vec<f64>,
    pub shot_vars: Vec<f64>,
    pub outcome_mean: Vec<f64>,
    /// Covariance of `(m_1, …, m_k)`.
    pub outcome_cov: Vec<Vec<f64>>,
    /// `Cov(m_i, Jz(t_2))`; for a single window, with `Jz(t_1)`.
    pub target_cov: Vec<f64>,
    /// Conditional `Var(Jz)` at the target window.
    pub conditional_var: f64,
    pub shortening: f64,
    pub decay_time: f64,
    pub decay_penalty: f64,
    pub theta_star: f64,
    pub rotation: f64,
    pub degradation: f64,
    pub xi2_nl: f64,
    pub xi2_cond: f64,
}

impl Chain {
    /// Index of the window whose `Jz` is estimated.
    pub fn target(&self) -> usize {
        if self.n_windows == 1 {
            0
        } else {
            1
        }
    }

    /// Wineland-weighted, penalty-included `var/pnl`.
    pub fn xi2_of(&self, var: f64) -> f64 {
        self.decay_penalty * self.shortening * var / self.pnl
    }

    pub fn outcome_matrix(&self) -> DMatrix<f64> {
        let k = self.n_windows;
        DMatrix::from_fn(k, k, |i, j| self.outcome_cov[i][j])
    }
}

fn windows_in_use(seq: &PulseSequence, mode: Mode) -> Result<usize, ProtocolError> {
    let available = seq.windows.len();
    match mode {
        Mode::TwoPulse => Ok(available.min(2)),
        Mode::ThreePulse if available >= 3 => Ok(3),
        Mode::ThreePulse => Err(ProtocolError::WindowCount {
            mode,
            needed: 3,
            available,
        }),
    }
}

fn gaussian_stage(stage: &str) -> impl Fn(crate::gaussian::GaussianError) -> ProtocolError + '_ {
    move |source| ProtocolError::Gaussian {
        stage: stage.to_string(),
        source,
    }
}

/// Builds the full moment chain for one sequence.
pub fn build_chain(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
) -> Result<Chain, ProtocolError> {
    check(seq, engine)?;
    build_chain_with(seq, engine, mode, &twist_stage(seq, engine)?)
}

fn check(seq: &PulseSequence, engine: &EngineConfig) -> Result<(), ProtocolError> {
    let errors: Vec<_> = seq
        .violations()
        .into_iter()
        .chain(engine.flags.violations())
        .collect();
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// [`build_chain`] with a precomputed twist stage, which must come from a
/// sequence with the same pump and W₁ as `seq`.
pub fn build_chain_with(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
    twist: &TwistStage,
) -> Result<Chain, ProtocolError> {
    check(seq, engine)?;
    let k = windows_in_use(seq, mode)?;
    let internal = twist.rotate(seq, engine);
    let mut ens = ensemble_from_moments(engine.n_atoms, engine.spin, &internal.rotated)
        .map_err(gaussian_stage("ensemble"))?;
    let t1 = seq.decay.t1;
    if let Some(t1) = t1 {
        ens = decay_channel(&ens, seq.w1.duration + seq.gap.tau_gap, t1)
            .map_err(gaussian_stage("gap"))?;
    }
    let pnl = ens.pnl;
    let backaction = if engine.flags.stroboscopic {
        Backaction::Evaded
    } else {
        Backaction::Unevaded
    };

    let windows = &seq.windows[..k];
    let mut couplings = Vec::with_capacity(k);
    for (j, w) in windows.iter().enumerate() {
        let stage = format!("windows[{j}]");
        couplings
            .push(QndCoupling::new(w.kappa2, w.shot_var, pnl).map_err(gaussian_stage(&stage))?);
    }
    let gains: Vec<f64> = couplings
        .iter()
        .map(|c| match backaction {
            Backaction::Evaded => c.gain,
            Backaction::Unevaded => c.gain / std::f64::consts::SQRT_2,
        })
        .collect();
    let shot_vars: Vec<f64> = windows.iter().map(|w| w.shot_var).collect();

    // Jz(t_{j+1}) = a_j·Jz(t_j) + w_j
    let mut jz_var = vec![ens.var_jz()];
    let mut jz_mean = vec![ens.mean.y];
    let mut carry = Vec::with_capacity(k);
    for j in 0..k.saturating_sub(1) {
        let dt = windows[j].duration + seq.window_gap;
        let a = t1.map_or(1.0, |t1| (-dt / t1).exp());
        let mut noise = (1.0 - a * a) * pnl + engine.flags.scattering_eta * pnl;
        if backaction == Backaction::Unevaded {
            noise += 0.5 * windows[j].kappa2 * pnl;
        }
        carry.push(a);
        jz_var.push(a * a * jz_var[j] + noise);
        jz_mean.push(a * jz_mean[j]);
    }
    let jz_cov = |i: usize, j: usize| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        carry[lo..hi].iter().product::<f64>() * jz_var[lo]
    };
    let outcome_cov: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    gains[i] * gains[j] * jz_cov(i, j) + if i == j { shot_vars[i] } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let outcome_mean: Vec<f64> = (0..k).map(|j| gains[j] * jz_mean[j]).collect();

    let target = if k == 1 { 0 } else { 1 };
    let target_cov: Vec<f64> = (0..k).map(|i| gains[i] * jz_cov(i, target)).collect();
    let conditional_var = match (mode, k) {
        (_, 1) => {
            let (post, _) = qnd_condition(&ens, &couplings[0], backaction)
                .map_err(gaussian_stage("windows[0]"))?;
            post.var_jz()
        }
        (Mode::TwoPulse, _) => {
            conditional_variance_two_pulse(outcome_cov[0][0], jz_var[1], target_cov[0])
                .map_err(gaussian_stage("windows[1]"))?
        }
        (Mode::ThreePulse, _) => {
            let m = Matrix3::new(
                outcome_cov[0][0],
                target_cov[0],
                outcome_cov[0][2],
                target_cov[0],
                jz_var[1],
                target_cov[2],
                outcome_cov[2][0],
                target_cov[2],
                outcome_cov[2][2],
            );
            conditional_variance_three_pulse(&m)
                .map_err(gaussian_stage("windows[2]"))?
                .variance
        }
    };

    let decay_time = match engine.flags.decay_basis {
        DecayBasis::ProbeTime => windows.iter().map(|w| w.duration).sum(),
        DecayBasis::CycleTime => {
            seq.w1.duration
                + seq.gap.tau_gap
                + windows.iter().map(|w| w.duration).sum::<f64>()
                + seq.window_gap * (k as f64 - 1.0)
        }
    };
    let (decay_time, t1_eff) = match t1 {
        Some(t1) => (decay_time, t1),
        None => (0.0, 1.0),
    };
    let loss_db = to_db(internal.shortening);
    let xi2_nl = wineland_xi2(jz_var[0], pnl, decay_time, t1_eff, loss_db);
    let xi2_cond = wineland_xi2(conditional_var, pnl, decay_time, t1_eff, loss_db);
    Ok(Chain {
        mode,
        n_windows: k,
        pnl,
        jz_var,
        gains,
        shot_vars,
        outcome_mean,
        outcome_cov,
        target_cov,
        conditional_var,
        shortening: internal.shortening,
        decay_time,
        decay_penalty: (2.0 * decay_time / t1_eff).exp(),
        theta_star: internal.theta_star,
        rotation: internal.rotation,
        degradation: internal.degradation,
        xi2_nl,
        xi2_cond,
    })
}

/// The same sequence without twisting.
pub fn reference_sequence(seq: &PulseSequence) -> PulseSequence {
    let mut reference = seq.clone();
    reference.w1.mu = 0.0;
    reference
}

/// Squeezing report of the deterministic chain; `ξ²_QND` comes from the
/// same sequence at `μ = 0`.
pub fn run_analytic(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
) -> Result<SqueezingReport, ProtocolError> {
    check(seq, engine)?;
    run_analytic_with(seq, engine, mode, &PreparedTwist::new(seq, engine)?)
}

/// Twist stages of a sequence and of its `μ = 0` reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedTwist {
    pub main: TwistStage,
    pub reference: TwistStage,
}

impl PreparedTwist {
    pub fn new(seq: &PulseSequence, engine: &EngineConfig) -> Result<Self, ProtocolError> {
        Ok(Self {
            main: twist_stage(seq, engine)?,
            reference: twist_stage(&reference_sequence(seq), engine)?,
        })
    }
}

/// [`run_analytic`] reusing `prepared`, which must match the pump and W₁
/// of `seq`.
pub fn run_analytic_with(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
    prepared: &PreparedTwist,
) -> Result<SqueezingReport, ProtocolError> {
    let chain = build_chain_with(seq, engine, mode, &prepared.main)?;
    let reference = build_chain_with(&reference_sequence(seq), engine, mode, &prepared.reference)?;
    Ok(SqueezingReport::new(
        chain.xi2_nl,
        reference.xi2_cond,
        chain.xi2_cond,
        chain.decay_penalty,
        to_db(chain.shortening),
    ))
}
