//! Gaussian moment model of the collective spin.
//!
//! The ensemble is described by the macroscopic `⟨Jx⟩`, the means of
//! `(Jy, Jz)` and their 2×2 covariance. A QND probe reads out `Jz` with
//! strength `κ̃²`; conditioning on the readout is ordinary linear-Gaussian
//! (Kalman) conditioning. Variances are reported against the projection
//! noise `N·F/2`.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qudit::{larmor_matrix, InternalMoments, InternalStatePair, Spin, SpinOperators};
use crate::to_db;

const PSD_TOL: f64 = 1e-9;
const PINV_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("ensemble needs at least one atom")]
    NoAtoms,
    #[error("projection noise must be positive, got {0}")]
    InvalidPnl(f64),
    #[error("|Jx| = {jx} exceeds N·F = {max}")]
    OverPolarized { jx: f64, max: f64 },
    #[error("shot-noise variance must be positive, got {0}")]
    InvalidShotNoise(f64),
    #[error("measurement strength must be non-negative, got {0}")]
    InvalidKappa(f64),
    #[error("inconsistent coupling: gain² · pnl / shot_var = {derived}, kappa2 = {kappa2}")]
    InconsistentCoupling { kappa2: f64, derived: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Collective state of `N` atoms in the Gaussian approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianEnsemble {
    pub n_atoms: u64,
    pub spin: Spin,
    pub jx: f64,
    /// `(⟨Jy⟩, ⟨Jz⟩)`.
    pub mean: Vector2<f64>,
    /// Covariance of `(Jy, Jz)`.
    pub cov: Matrix2<f64>,
    /// `Var(Jz)_PNL = N·F/2`.
    pub pnl: f64,
}

impl GaussianEnsemble {
    pub fn new(
        n_atoms: u64,
        spin: Spin,
        jx: f64,
        mean: Vector2<f64>,
        cov: Matrix2<f64>,
    ) -> Result<Self, GaussianError> {
        if n_atoms == 0 {
            return Err(GaussianError::NoAtoms);
        }
        let pnl = n_atoms as f64 * spin.css_variance();
        if !(pnl > 0.0) {
            return Err(GaussianError::InvalidPnl(pnl));
        }
        let max = n_atoms as f64 * spin.value();
        if jx.abs() > max * (1.0 + 1e-12) {
            return Err(GaussianError::OverPolarized { jx, max });
        }
        check_psd2(&cov)?;
        Ok(Self {
            n_atoms,
            spin,
            jx,
            mean,
            cov: symmetrize(&cov),
            pnl,
        })
    }

    /// Product of `N` ideal coherent states.
    pub fn css(n_atoms: u64, spin: Spin) -> Result<Self, GaussianError> {
        let pnl = n_atoms as f64 * spin.css_variance();
        Self::new(
            n_atoms,
            spin,
            -(n_atoms as f64) * spin.value(),
            Vector2::zeros(),
            Matrix2::identity() * pnl,
        )
    }

    pub fn var_jy(&self) -> f64 {
        self.cov[(0, 0)]
    }

    pub fn var_jz(&self) -> f64 {
        self.cov[(1, 1)]
    }

    /// `Var(Jz) / pnl`.
    pub fn normalized_var_jz(&self) -> f64 {
        self.var_jz() / self.pnl
    }

    pub fn cov_eigenvalues(&self) -> [f64; 2] {
        let e = SymmetricEigen::new(self.cov).eigenvalues;
        if e[0] <= e[1] {
            [e[0], e[1]]
        } else {
            [e[1], e[0]]
        }
    }
}

fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

fn check_psd2(cov: &Matrix2<f64>) -> Result<(), GaussianError> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(GaussianError::NotPsd(f64::NAN));
    }
    let sym = symmetrize(cov);
    let e = SymmetricEigen::new(sym).eigenvalues;
    let min = e[0].min(e[1]);
    if min < -PSD_TOL * sym.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(GaussianError::NotPsd(min));
    }
    Ok(())
}

/// Independent atoms in `|↑⟩`: means and covariance add.
pub fn ensemble_from_internal(
    ops: &SpinOperators,
    n_atoms: u64,
    pair: &InternalStatePair,
    internal_cov: &Matrix2<f64>,
) -> Result<GaussianEnsemble, GaussianError> {
    check_psd2(internal_cov)?;
    let mut moments = InternalMoments::of_state(ops, &pair.up);
    moments.cov = *internal_cov;
    ensemble_from_moments(n_atoms, ops.spin(), &moments)
}

/// `N` independent copies of a single-atom (possibly mixed) state.
pub fn ensemble_from_moments(
    n_atoms: u64,
    spin: Spin,
    moments: &InternalMoments,
) -> Result<GaussianEnsemble, GaussianError> {
    check_psd2(&moments.cov)?;
    let n = n_atoms as f64;
    GaussianEnsemble::new(
        n_atoms,
        spin,
        n * moments.mean.x,
        Vector2::new(n * moments.mean.y, n * moments.mean.z),
        moments.cov * n,
    )
}

/// Larmor precession by `angle` about `x`, same sense as
/// [`crate::qudit::rotate_x`].
pub fn larmor_rotate(ens: &GaussianEnsemble, angle: f64) -> GaussianEnsemble {
    let r = larmor_matrix(angle);
    GaussianEnsemble {
        mean: r * ens.mean,
        cov: symmetrize(&(r * ens.cov * r.transpose())),
        ..*ens
    }
}

/// Whether stroboscopic probing evades measurement backaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backaction {
    /// Stroboscopic probing: the rotating-frame `Jz` is a QND observable
    /// and no backaction noise enters.
    #[default]
    Evaded,
    /// Continuous probing of a precessing spin: the recorded quadrature
    /// carries half the strength and both rotating-frame quadratures pick
    /// up `κ̃²/2 · pnl` of backaction noise.
    Unevaded,
}

/// QND readout `m = gain·Jz + noise`, `Var(noise) = shot_var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QndCoupling {
    pub kappa2: f64,
    pub shot_var: f64,
    pub gain: f64,
}

impl QndCoupling {
    /// Derives the gain from `κ̃² = gain²·pnl/shot_var`.
    pub fn new(kappa2: f64, shot_var: f64, pnl: f64) -> Result<Self, GaussianError> {
        if !(kappa2 >= 0.0) || !kappa2.is_finite() {
            return Err(GaussianError::InvalidKappa(kappa2));
        }
        if !(shot_var > 0.0) || !shot_var.is_finite() {
            return Err(GaussianError::InvalidShotNoise(shot_var));
        }
        if !(pnl > 0.0) {
            return Err(GaussianError::InvalidPnl(pnl));
        }
        Ok(Self {
            kappa2,
            shot_var,
            gain: (kappa2 * shot_var / pnl).sqrt(),
        })
    }

    /// Accepts all three numbers, checking them against each other.
    pub fn from_parts(
        kappa2: f64,
        shot_var: f64,
        gain: f64,
        pnl: f64,
    ) -> Result<Self, GaussianError> {
        let c = Self::new(kappa2, shot_var, pnl)?;
        let derived = gain * gain * pnl / shot_var;
        if (derived - kappa2).abs() > 1e-9 * kappa2.abs().max(derived.abs()).max(1e-300) {
            return Err(GaussianError::InconsistentCoupling { kappa2, derived });
        }
        Ok(Self { gain, ..c })
    }
}

fn effective_readout(coupling: &QndCoupling, backaction: Backaction) -> f64 {
    match backaction {
        Backaction::Evaded => coupling.gain,
        Backaction::Unevaded => coupling.gain / std::f64::consts::SQRT_2,
    }
}

/// Covariance update for one probe window.
///
/// Conditions on a readout taken at its predicted mean (so the means are
/// unchanged) and returns the predicted outcome variance
/// `shot_var + gain²·Var(Jz)`. Use [`qnd_update`] to condition on an actual
/// outcome.
pub fn qnd_condition(
    ens: &GaussianEnsemble,
    coupling: &QndCoupling,
    backaction: Backaction,
) -> Result<(GaussianEnsemble, f64), GaussianError> {
    let predicted = effective_readout(coupling, backaction) * ens.mean.y;
    qnd_update(ens, coupling, backaction, predicted)
}

/// Kalman update on the readout `outcome`.
pub fn qnd_update(
    ens: &GaussianEnsemble,
    coupling: &QndCoupling,
    backaction: Backaction,
    outcome: f64,
) -> Result<(GaussianEnsemble, f64), GaussianError> {
    if !(coupling.shot_var > 0.0) {
        return Err(GaussianError::InvalidShotNoise(coupling.shot_var));
    }
    let g = effective_readout(coupling, backaction);
    // h = (0, g)
    let p = ens.cov;
    let ph = Vector2::new(p[(0, 1)] * g, p[(1, 1)] * g);
    let s = g * ph.y + coupling.shot_var;
    let innovation = outcome - g * ens.mean.y;
    let gain = ph / s;
    let mean = ens.mean + gain * innovation;
    let mut cov = symmetrize(&(p - ph * ph.transpose() / s));
    if backaction == Backaction::Unevaded {
        cov += Matrix2::identity() * (0.5 * coupling.kappa2 * ens.pnl);
    }
    Ok((GaussianEnsemble { mean, cov, ..*ens }, s))
}

/// `Var(m₂|m₁) = V₂ − C₁₂²/V₁`.
pub fn conditional_variance_two_pulse(v1: f64, v2: f64, c12: f64) -> Result<f64, GaussianError> {
    if !(v1 > 0.0) || !(v2 >= 0.0) {
        return Err(GaussianError::Domain(format!(
            "variances must be positive (V1 = {v1}, V2 = {v2})"
        )));
    }
    if c12 * c12 > v1 * v2 * (1.0 + 1e-12) {
        return Err(GaussianError::Domain(format!(
            "Cauchy-Schwarz violated: C12² = {} > V1·V2 = {}",
            c12 * c12,
            v1 * v2
        )));
    }
    Ok((v2 - c12 * c12 / v1).clamp(0.0, v2))
}

/// Retrodicted variance of the middle outcome given the other two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrodiction {
    pub variance: f64,
    /// The `(m₁, m₃)` block was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// `V₂ − [C₁₂ C₂₃]·Σ₁₃⁻¹·[C₁₂ C₂₃]ᵀ`.
pub fn conditional_variance_three_pulse(
    cov3: &Matrix3<f64>,
) -> Result<Retrodiction, GaussianError> {
    let sym = (cov3 + cov3.transpose()) * 0.5;
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(GaussianError::Domain("non-finite covariance".into()));
    }
    let e = SymmetricEigen::new(sym).eigenvalues;
    let min = e.min();
    if min < -PSD_TOL * sym.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(GaussianError::NotPsd(min));
    }
    let v2 = sym[(1, 1)];
    let c = Vector2::new(sym[(0, 1)], sym[(1, 2)]);
    let block = Matrix2::new(sym[(0, 0)], sym[(0, 2)], sym[(2, 0)], sym[(2, 2)]);
    let eig = SymmetricEigen::new(block);
    let scale = eig.eigenvalues.abs().max();
    let mut pseudo = false;
    let mut inv = Matrix2::zeros();
    for k in 0..2 {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() <= PINV_TOL * scale.max(f64::MIN_POSITIVE) {
            pseudo = true;
            continue;
        }
        let u = eig.eigenvectors.column(k);
        inv += u * u.transpose() / lambda;
    }
    let explained = (c.transpose() * inv * c)[(0, 0)];
    Ok(Retrodiction {
        variance: (v2 - explained).clamp(0.0, v2),
        pseudo_inverse: pseudo,
    })
}

/// Wineland squeezing with the decay and mean-spin-shortening penalties,
/// `e^{2T/T₁} · 10^{loss_db/10} · var_sss / var_pnl`.
pub fn wineland_xi2(
    var_sss: f64,
    var_pnl: f64,
    t_elapsed: f64,
    t1: f64,
    mean_spin_loss_db: f64,
) -> f64 {
    (2.0 * t_elapsed / t1).exp() * 10f64.powf(mean_spin_loss_db / 10.0) * var_sss / var_pnl
}

/// `1 / (1 + κ̃²)`, QND squeezing of a coherent state.
pub fn xi2_qnd(kappa2: f64) -> f64 {
    1.0 / (1.0 + kappa2)
}

/// Combined internal plus QND squeezing, `ξ²_NL / (1 + κ̃²·ξ²_NL)`.
pub fn xi2_tot(xi2_nl: f64, kappa2: f64) -> f64 {
    xi2_nl / (1.0 + kappa2 * xi2_nl)
}

/// Photon-scattering bound `2 / √(1/ξ²_NL + α₀)`.
pub fn scattering_limit(xi2_nl: f64, alpha0: f64) -> f64 {
    2.0 / (1.0 / xi2_nl + alpha0).sqrt()
}

/// Range of combined squeezing between the combination formula
/// [`xi2_tot`] and the plain product `ξ²_NL·ξ²_QND` (a dB sum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingBracket {
    pub combined_db: f64,
    pub db_sum_db: f64,
}

impl SqueezingBracket {
    pub fn new(xi2_nl: f64, kappa2: f64) -> Self {
        Self {
            combined_db: to_db(xi2_tot(xi2_nl, kappa2)),
            db_sum_db: to_db(xi2_nl * xi2_qnd(kappa2)),
        }
    }

    pub fn lower_db(&self) -> f64 {
        self.combined_db.min(self.db_sum_db)
    }

    pub fn upper_db(&self) -> f64 {
        self.combined_db.max(self.db_sum_db)
    }

    /// Whether `measured_db ± err_db` intersects the bracket.
    pub fn overlaps(&self, measured_db: f64, err_db: f64) -> bool {
        measured_db - err_db <= self.upper_db() && measured_db + err_db >= self.lower_db()
    }
}

/// Relaxation toward coherent-state noise over `dt`.
///
/// Means and `Jx` shrink by `e^{−dt/T₁}`; the covariance relaxes as
/// `e^{−2dt/T₁}·cov + (1 − e^{−2dt/T₁})·pnl·I`.
pub fn decay_channel(
    ens: &GaussianEnsemble,
    dt: f64,
    t1: f64,
) -> Result<GaussianEnsemble, GaussianError> {
    if !(dt >= 0.0) {
        return Err(GaussianError::Domain(format!(
            "decay interval must be non-negative, got {dt}"
        )));
    }
    if !(t1 > 0.0) {
        return Err(GaussianError::Domain(format!(
            "T1 must be positive, got {t1}"
        )));
    }
    let a = (-dt / t1).exp();
    let a2 = a * a;
    Ok(GaussianEnsemble {
        jx: ens.jx * a,
        mean: ens.mean * a,
        cov: ens.cov * a2 + Matrix2::identity() * ((1.0 - a2) * ens.pnl),
        ..*ens
    })
}

/// Photon-scattering noise: adds `eta·pnl` to both variances.
pub fn scattering_noise(ens: &GaussianEnsemble, eta: f64) -> GaussianEnsemble {
    GaussianEnsemble {
        cov: ens.cov + Matrix2::identity() * (eta * ens.pnl),
        ..*ens
    }
}

/// Squeezing figures of one protocol run (linear ξ² and dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub xi2_nl: f64,
    pub xi2_qnd: f64,
    pub xi2_tot: f64,
    pub xi2_nl_db: f64,
    pub xi2_qnd_db: f64,
    pub xi2_tot_db: f64,
    /// `e^{2T/T₁}` applied to `xi2_tot`.
    pub decay_penalty: f64,
    pub mean_spin_loss_db: f64,
}

impl SqueezingReport {
    pub fn new(
        xi2_nl: f64,
        xi2_qnd: f64,
        xi2_tot: f64,
        decay_penalty: f64,
        mean_spin_loss_db: f64,
    ) -> Self {
        Self {
            xi2_nl,
            xi2_qnd,
            xi2_tot,
            xi2_nl_db: to_db(xi2_nl),
            xi2_qnd_db: to_db(xi2_qnd),
            xi2_tot_db: to_db(xi2_tot),
            decay_penalty,
            mean_spin_loss_db,
        }
    }

    /// `κ̃²` that maps `xi2_nl` onto `xi2_tot` through [`xi2_tot`].
    pub fn effective_kappa2(&self) -> f64 {
        1.0 / self.xi2_tot - 1.0 / self.xi2_nl
    }
}
