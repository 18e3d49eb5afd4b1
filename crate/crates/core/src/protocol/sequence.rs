//! Declarative pulse sequence and engine configuration.

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::qudit::{RotationDenominator, Spin};

/// Polarization reached by optical pumping.
pub const DEFAULT_POLARIZATION: f64 = 0.974;
/// Population ratio of `|ψ_2⟩` to `|ψ_1⟩` in the unpumped remainder, chosen
/// so that the pumped state carries 7 % excess transverse noise.
pub const DEFAULT_RESIDUAL_RATIO: f64 = 0.0906312016316857;
pub const DEFAULT_DUTY_CYCLE: f64 = 0.1;
/// Twisting phase minimizing `ξ²_NL` for the default sequence.
pub const DEFAULT_MU: f64 = 0.2592722540408407;
pub const DEFAULT_W1_DURATION: f64 = 1e-3;
pub const DEFAULT_TAU_GAP: f64 = 2e-6;
pub const DEFAULT_LARMOR_FREQUENCY: f64 = 2.0 * std::f64::consts::PI * 500e3;
pub const DEFAULT_WINDOW_DURATION: f64 = 0.2e-3;
pub const DEFAULT_WINDOW_GAP: f64 = 0.31e-3;
pub const DEFAULT_T1: f64 = 37e-3;
/// Strength of the first probe window; a coherent state run through the
/// default two-pulse sequence reaches −2.83 dB.
pub const DEFAULT_KAPPA2_W21: f64 = 1.1125975397074106;
/// Verification window; only sets the readout precision.
pub const DEFAULT_KAPPA2_W22: f64 = 5.0;
/// Third window; a coherent state run through the default three-pulse
/// sequence reaches −5.10 dB.
pub const DEFAULT_KAPPA2_W23: f64 = 1.5219792305725954;
/// Degradation of the twisting at vanishing duty cycle.
pub const DEFAULT_DEGRADATION_FLOOR: f64 = 0.12785431713265039;
/// Degradation of the twisting with the probe always on.
pub const DEFAULT_DEGRADATION_CEILING: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpStage {
    /// Population of the stretched state `|ψ_0⟩`.
    pub polarization: f64,
    /// `p(ψ_2)/p(ψ_1)` of the remainder; 0 puts all of it in `|ψ_1⟩`.
    pub residual_ratio: f64,
}

impl Default for PumpStage {
    fn default() -> Self {
        Self {
            polarization: DEFAULT_POLARIZATION,
            residual_ratio: DEFAULT_RESIDUAL_RATIO,
        }
    }
}

/// The twisting window W₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OatWindow {
    pub mu: f64,
    pub duty_cycle: f64,
    /// Seconds.
    pub duration: f64,
    /// Overrides the duty-cycle model when set.
    pub degradation: Option<f64>,
}

impl Default for OatWindow {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            duty_cycle: DEFAULT_DUTY_CYCLE,
            duration: DEFAULT_W1_DURATION,
            degradation: None,
        }
    }
}

/// Free precession between W₁ and the first probe window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarmorGap {
    /// Seconds.
    pub tau_gap: f64,
    /// rad/s.
    pub larmor_frequency: f64,
    /// Extra rotation added to `Ω_L·τ_gap`, radians.
    pub theta: f64,
}

impl Default for LarmorGap {
    fn default() -> Self {
        Self {
            tau_gap: DEFAULT_TAU_GAP,
            larmor_frequency: DEFAULT_LARMOR_FREQUENCY,
            theta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeWindow {
    /// Seconds.
    pub duration: f64,
    pub kappa2: f64,
    /// Readout noise in detector units.
    pub shot_var: f64,
}

impl ProbeWindow {
    pub fn new(kappa2: f64) -> Self {
        Self {
            duration: DEFAULT_WINDOW_DURATION,
            kappa2,
            shot_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    /// `None` disables relaxation and the decay penalty.
    pub t1: Option<f64>,
}

impl Default for DecaySpec {
    fn default() -> Self {
        Self {
            t1: Some(DEFAULT_T1),
        }
    }
}

/// Pump, W₁, Larmor gap, 1–3 probe windows separated by `window_gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub pump: PumpStage,
    pub w1: OatWindow,
    pub gap: LarmorGap,
    pub windows: Vec<ProbeWindow>,
    /// Δτ between probe windows, seconds.
    pub window_gap: f64,
    pub decay: DecaySpec,
}

impl Default for PulseSequence {
    fn default() -> Self {
        Self {
            pump: PumpStage::default(),
            w1: OatWindow::default(),
            gap: LarmorGap::default(),
            windows: vec![
                ProbeWindow::new(DEFAULT_KAPPA2_W21),
                ProbeWindow::new(DEFAULT_KAPPA2_W22),
                ProbeWindow::new(DEFAULT_KAPPA2_W23),
            ],
            window_gap: DEFAULT_WINDOW_GAP,
            decay: DecaySpec::default(),
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidSequence {
        field: field.into(),
        reason: reason.into(),
    }
}

fn check_duration(field: &str, value: f64, errors: &mut Vec<ProtocolError>) {
    if !(value.is_finite() && value >= 0.0) {
        errors.push(invalid(
            field,
            format!("duration must be finite and ≥ 0, got {value}"),
        ));
    }
}

impl PulseSequence {
    /// Every violated invariant, in field order.
    pub fn violations(&self) -> Vec<ProtocolError> {
        let mut errors = Vec::new();
        let p = &self.pump;
        if !(p.polarization > 0.0 && p.polarization <= 1.0) {
            errors.push(invalid(
                "pump.polarization",
                format!("must lie in (0, 1], got {}", p.polarization),
            ));
        }
        if !(p.residual_ratio.is_finite() && p.residual_ratio >= 0.0) {
            errors.push(invalid(
                "pump.residual_ratio",
                format!("must be finite and ≥ 0, got {}", p.residual_ratio),
            ));
        }
        let w = &self.w1;
        if !w.mu.is_finite() {
            errors.push(invalid("w1.mu", format!("must be finite, got {}", w.mu)));
        }
        if !(w.duty_cycle > 0.0 && w.duty_cycle <= 1.0) {
            errors.push(invalid(
                "w1.duty_cycle",
                format!("must lie in (0, 1], got {}", w.duty_cycle),
            ));
        }
        check_duration("w1.duration", w.duration, &mut errors);
        if let Some(d) = w.degradation {
            if !(0.0..=1.0).contains(&d) {
                errors.push(invalid(
                    "w1.degradation",
                    format!("must lie in [0, 1], got {d}"),
                ));
            }
        }
        check_duration("gap.tau_gap", self.gap.tau_gap, &mut errors);
        if !self.gap.larmor_frequency.is_finite() {
            errors.push(invalid("gap.larmor_frequency", "must be finite"));
        }
        if !self.gap.theta.is_finite() {
            errors.push(invalid("gap.theta", "must be finite"));
        }
        if self.windows.is_empty() || self.windows.len() > 3 {
            errors.push(invalid(
                "windows",
                format!("need 1 to 3 probe windows, got {}", self.windows.len()),
            ));
        }
        for (i, win) in self.windows.iter().enumerate() {
            check_duration(&format!("windows[{i}].duration"), win.duration, &mut errors);
            if !(win.kappa2.is_finite() && win.kappa2 >= 0.0) {
                errors.push(invalid(
                    format!("windows[{i}].kappa2"),
                    format!("must be finite and ≥ 0, got {}", win.kappa2),
                ));
            }
            if !(win.shot_var.is_finite() && win.shot_var > 0.0) {
                errors.push(invalid(
                    format!("windows[{i}].shot_var"),
                    format!("must be finite and > 0, got {}", win.shot_var),
                ));
            }
        }
        check_duration("window_gap", self.window_gap, &mut errors);
        if let Some(t1) = self.decay.t1 {
            if !(t1.is_finite() && t1 > 0.0) {
                errors.push(invalid(
                    "decay.t1",
                    format!("must be finite and > 0, got {t1}"),
                ));
            }
        }
        errors
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Larmor rotation accumulated in the gap, before any axis offset.
    pub fn larmor_angle(&self) -> f64 {
        self.gap.larmor_frequency * self.gap.tau_gap + self.gap.theta
    }
}

/// Linear map from duty cycle to twisting degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutyCycleModel {
    /// Degradation as `d → 0`.
    pub floor: f64,
    /// Degradation at `d = 1`.
    pub ceiling: f64,
}

impl Default for DutyCycleModel {
    fn default() -> Self {
        Self {
            floor: DEFAULT_DEGRADATION_FLOOR,
            ceiling: DEFAULT_DEGRADATION_CEILING,
        }
    }
}

impl DutyCycleModel {
    pub fn degradation(&self, duty_cycle: f64) -> f64 {
        self.floor + (self.ceiling - self.floor) * duty_cycle
    }

    pub fn violations(&self) -> Vec<ProtocolError> {
        let mut errors = Vec::new();
        if !(0.0..=1.0).contains(&self.floor) {
            errors.push(invalid(
                "duty_cycle_model.floor",
                format!("must lie in [0, 1], got {}", self.floor),
            ));
        }
        if !(0.0..=1.0).contains(&self.ceiling) {
            errors.push(invalid(
                "duty_cycle_model.ceiling",
                format!("must lie in [0, 1], got {}", self.ceiling),
            ));
        }
        if self.ceiling < self.floor {
            errors.push(invalid(
                "duty_cycle_model.ceiling",
                "must not be below floor (degradation must not grow as d → 0)",
            ));
        }
        errors
    }
}

/// How the gap angle relates to the squeezing ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaReference {
    /// The rotation is exactly `Ω_L·τ_gap + θ`.
    Larmor,
    /// `θ` is measured from the squeezed axis: the rotation further includes
    /// the twisting-induced tilt, so `θ = 0` puts the squeezed quadrature on `z`.
    #[default]
    SqueezingAxis,
}

/// Time `T` entering the `e^{2T/T₁}` penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayBasis {
    /// Total probe time of the windows in use.
    #[default]
    ProbeTime,
    /// W₁ through the last window in use, gaps included.
    CycleTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFlags {
    pub stroboscopic: bool,
    pub theta_reference: ThetaReference,
    pub decay_basis: DecayBasis,
    /// `γ` in `D = 1 − (1 − D(d))·e^{−γμ}`.
    pub oat_decoherence: f64,
    /// Scattering noise per probe window, in units of pnl.
    pub scattering_eta: f64,
    pub rotation_denominator: RotationDenominator,
    pub duty_cycle_model: DutyCycleModel,
}

impl Default for ModelFlags {
    fn default() -> Self {
        Self {
            stroboscopic: true,
            theta_reference: ThetaReference::default(),
            decay_basis: DecayBasis::default(),
            oat_decoherence: 0.0,
            scattering_eta: 0.0,
            rotation_denominator: RotationDenominator::default(),
            duty_cycle_model: DutyCycleModel::default(),
        }
    }
}

impl ModelFlags {
    pub fn violations(&self) -> Vec<ProtocolError> {
        let mut errors = self.duty_cycle_model.violations();
        if !(self.oat_decoherence.is_finite() && self.oat_decoherence >= 0.0) {
            errors.push(invalid(
                "flags.oat_decoherence",
                format!("must be finite and ≥ 0, got {}", self.oat_decoherence),
            ));
        }
        if !(self.scattering_eta.is_finite() && self.scattering_eta >= 0.0) {
            errors.push(invalid(
                "flags.scattering_eta",
                format!("must be finite and ≥ 0, got {}", self.scattering_eta),
            ));
        }
        errors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub spin: Spin,
    pub n_atoms: u64,
    pub flags: ModelFlags,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            spin: Spin::from_twice(4),
            n_atoms: 100_000_000_000,
            flags: ModelFlags::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Window 2 conditioned on window 1.
    #[default]
    TwoPulse,
    /// Window 2 conditioned on windows 1 and 3.
    ThreePulse,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sequence_is_valid() {
        assert!(PulseSequence::default().violations().is_empty());
        assert!(ModelFlags::default().violations().is_empty());
    }

    #[test]
    fn collects_all_violations() {
        let mut seq = PulseSequence::default();
        seq.w1.duty_cycle = 1.5;
        seq.pump.polarization = 0.0;
        seq.windows[1].shot_var = 0.0;
        let errors = seq.violations();
        assert_eq!(errors.len(), 3);
        assert!(errors
            .iter()
            .any(|e| e.to_string().contains("w1.duty_cycle")));
        assert!(errors
            .iter()
            .any(|e| e.to_string().contains("windows[1].shot_var")));
    }

    #[test]
    fn window_count_bounds() {
        let mut seq = PulseSequence::default();
        seq.windows.clear();
        assert!(seq.validate().is_err());
        seq.windows = vec![ProbeWindow::new(1.0); 4];
        assert!(seq.validate().is_err());
        seq.windows.truncate(1);
        assert!(seq.validate().is_ok());
    }

    #[test]
    fn duty_cycle_model_is_linear_and_monotone() {
        let m = DutyCycleModel {
            floor: 0.2,
            ceiling: 0.9,
        };
        assert!((m.degradation(0.0) - 0.2).abs() < 1e-15);
        assert!((m.degradation(1.0) - 0.9).abs() < 1e-15);
        assert!((m.degradation(0.5) - 0.55).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in (1..=100).rev() {
            let d = m.degradation(k as f64 / 100.0);
            assert!(d <= last);
            last = d;
        }
        assert!(!DutyCycleModel {
            floor: 0.5,
            ceiling: 0.4
        }
        .violations()
        .is_empty());
    }
}
