//! One-parameter sweeps and the mean-spin rotation scan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_analytic, run_analytic_with, PreparedTwist};
use super::sequence::{EngineConfig, Mode, PulseSequence};
use super::ProtocolError;
use crate::qudit::{mean_spin_response, RotationDenominator, Spin, SpinOperators};

/// Sequence knobs that sweeps and the optimizer can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    DutyCycle,
    Mu,
    /// Gap rotation offset `θ`, radians.
    Theta,
    /// Strength of every probe window.
    Kappa2,
    TauGap,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::DutyCycle,
        Parameter::Mu,
        Parameter::Theta,
        Parameter::Kappa2,
        Parameter::TauGap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Parameter::DutyCycle => "duty_cycle",
            Parameter::Mu => "mu",
            Parameter::Theta => "theta",
            Parameter::Kappa2 => "kappa2",
            Parameter::TauGap => "tau_gap",
        }
    }

    pub fn get(&self, seq: &PulseSequence) -> f64 {
        match self {
            Parameter::DutyCycle => seq.w1.duty_cycle,
            Parameter::Mu => seq.w1.mu,
            Parameter::Theta => seq.gap.theta,
            Parameter::Kappa2 => seq.windows.first().map_or(0.0, |w| w.kappa2),
            Parameter::TauGap => seq.gap.tau_gap,
        }
    }

    pub fn set(&self, seq: &mut PulseSequence, value: f64) {
        match self {
            Parameter::DutyCycle => seq.w1.duty_cycle = value,
            Parameter::Mu => seq.w1.mu = value,
            Parameter::Theta => seq.gap.theta = value,
            Parameter::Kappa2 => seq.windows.iter_mut().for_each(|w| w.kappa2 = value),
            Parameter::TauGap => seq.gap.tau_gap = value,
        }
    }

    /// Whether changing this parameter leaves the pump and twisting intact.
    pub fn preserves_twist(&self) -> bool {
        matches!(
            self,
            Parameter::Theta | Parameter::Kappa2 | Parameter::TauGap
        )
    }

    pub fn with(&self, seq: &PulseSequence, value: f64) -> PulseSequence {
        let mut out = seq.clone();
        self.set(&mut out, value);
        out
    }
}

impl std::str::FromStr for Parameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown parameter `{s}` (expected one of duty_cycle, mu, theta, kappa2, tau_gap)"))
    }
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub xi2_nl_db: f64,
    pub xi2_tot_db: f64,
    /// Mean-spin rotation caused by the twisting, degrees.
    pub rotation_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub result: Result<SweepPoint, String>,
}

/// Twist-induced mean-spin rotation in degrees.
///
/// With the `exp(+iμ·fy²)` propagator a displacement along `+y` turns
/// toward `−z`, so [`crate::qudit::MeanSpinResponse::angle`] is negative
/// for `μ > 0`; this reports the turning angle with the opposite sign.
pub fn rotation_angle_deg(spin: Spin, mu: f64, denominator: RotationDenominator) -> f64 {
    let ops = SpinOperators::new(spin);
    turning_angle_deg(&ops, mu, denominator)
}

fn turning_angle_deg(ops: &SpinOperators, mu: f64, denominator: RotationDenominator) -> f64 {
    // adding 0.0 maps −0.0 to 0.0
    -mean_spin_response(ops, mu, 0.0)
        .angle(denominator)
        .to_degrees()
        + 0.0
}

/// Runs the analytic chain once per value, in parallel, keeping the given
/// order. A failing row is recorded and the sweep continues.
pub fn sweep(
    seq: &PulseSequence,
    engine: &EngineConfig,
    parameter: Parameter,
    values: &[f64],
    mode: Mode,
) -> Result<Vec<SweepRow>, ProtocolError> {
    if values.is_empty() {
        return Err(ProtocolError::EmptySweep);
    }
    let prepared = if parameter.preserves_twist() {
        PreparedTwist::new(seq, engine).ok()
    } else {
        None
    };
    let fixed_angle = (parameter != Parameter::Mu)
        .then(|| rotation_angle_deg(engine.spin, seq.w1.mu, engine.flags.rotation_denominator));
    Ok(values
        .par_iter()
        .map(|&value| {
            let s = parameter.with(seq, value);
            let report = match &prepared {
                Some(p) => run_analytic_with(&s, engine, mode, p),
                None => run_analytic(&s, engine, mode),
            };
            let result = report
                .map(|r| SweepPoint {
                    xi2_nl_db: r.xi2_nl_db,
                    xi2_tot_db: r.xi2_tot_db,
                    rotation_angle_deg: fixed_angle.unwrap_or_else(|| {
                        rotation_angle_deg(engine.spin, s.w1.mu, engine.flags.rotation_denominator)
                    }),
                })
                .map_err(|e| e.to_string());
            SweepRow { value, result }
        })
        .collect())
}

/// `(μ, turning angle in degrees)` for each `μ`, see [`rotation_angle_deg`].
pub fn rotation_angle_scan(
    spin: Spin,
    mu_values: &[f64],
    denominator: RotationDenominator,
) -> Vec<(f64, f64)> {
    let ops = SpinOperators::new(spin);
    mu_values
        .par_iter()
        .map(|&mu| (mu, turning_angle_deg(&ops, mu, denominator)))
        .collect()
}
