//! Single-atom spin-`F` algebra.
//!
//! All matrices act on the `2F+1` Zeeman sublevels in the `fz` eigenbasis,
//! ordered by descending magnetic quantum number: index `k` holds
//! `m = F − k`, so `fz = diag(F, F−1, …, −F)`.
//!
//! The bias field, and therefore the quantization axis of the experiment,
//! points along `x`. The states `|ψ_α⟩` (`α = 0 … 2F`) are the `fx`
//! eigenstates with eigenvalue `α − F`; `|ψ_0⟩` is the stretched coherent
//! state the atoms are pumped into. Their phases are fixed by the ladder
//! convention `|ψ_{α+1}⟩ ∝ (fy + i·fz)|ψ_α⟩`, which makes
//! `⟨ψ_1|fy|ψ_0⟩` real and positive.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::golden_section;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

const HERMITIAN_TOL: f64 = 1e-10;
const QUADRATURE_GRID: usize = 3600;
const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuditError {
    #[error("spin quantum number {0} is not a non-negative half-integer")]
    InvalidSpin(f64),
    #[error("generator is not Hermitian (max |G − G†| = {0:e})")]
    NotHermitian(f64),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("state dimension {got} does not match spin dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no orthogonal coupling: fz leaves the state invariant (ΔFz = {0:e})")]
    NoOrthogonalCoupling(f64),
    #[error("OAT degradation {0} outside [0, 1]")]
    InvalidDegradation(f64),
    #[error("OAT phase must be finite")]
    NonFinitePhase,
}

/// Spin quantum number stored as the integer `2F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub fn new(f: f64) -> Result<Self, QuditError> {
        let twice = 2.0 * f;
        if !f.is_finite() || f < 0.0 || (twice - twice.round()).abs() > 1e-12 || twice > 64.0 {
            return Err(QuditError::InvalidSpin(f));
        }
        Ok(Self {
            twice: twice.round() as u32,
        })
    }

    pub fn from_twice(twice: u32) -> Self {
        Self { twice }
    }

    pub fn value(&self) -> f64 {
        f64::from(self.twice) / 2.0
    }

    pub fn twice(&self) -> u32 {
        self.twice
    }

    pub fn dim(&self) -> usize {
        self.twice as usize + 1
    }

    /// Magnetic quantum number stored at basis index `k`.
    pub fn m(&self, k: usize) -> f64 {
        self.value() - k as f64
    }

    /// Transverse variance of a coherent state, `F/2`.
    pub fn css_variance(&self) -> f64 {
        self.value() / 2.0
    }
}

/// The angular momentum matrices for one spin, plus the `fx` eigenbasis.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    spin: Spin,
    pub fx: CMatrix,
    pub fy: CMatrix,
    pub fz: CMatrix,
    x_basis: CMatrix,
}

/// Builds `fx`, `fy`, `fz` for spin `f` from the ladder operators.
pub fn make_spin_operators(f: f64) -> Result<SpinOperators, QuditError> {
    Ok(SpinOperators::new(Spin::new(f)?))
}

impl SpinOperators {
    pub fn new(spin: Spin) -> Self {
        let dim = spin.dim();
        let f = spin.value();
        let mut raise = CMatrix::zeros(dim, dim);
        for k in 1..dim {
            let m = spin.m(k);
            raise[(k - 1, k)] = C64::new((f * (f + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
        let lower = raise.adjoint();
        let fx = (&raise + &lower).scale(0.5);
        let fy = (&raise - &lower) * C64::new(0.0, -0.5);
        let fz = CMatrix::from_diagonal(&CVector::from_fn(dim, |k, _| C64::new(spin.m(k), 0.0)));
        let x_basis = build_x_basis(&fx, &fy, &fz);
        Self {
            spin,
            fx,
            fy,
            fz,
            x_basis,
        }
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    /// `F_θ = cos θ·fz + sin θ·fy`.
    pub fn quadrature(&self, theta: f64) -> CMatrix {
        self.fz.scale(theta.cos()) + self.fy.scale(theta.sin())
    }

    /// Columns are `|ψ_α⟩`, the `fx` eigenstates with eigenvalue `α − F`.
    pub fn x_basis(&self) -> &CMatrix {
        &self.x_basis
    }

    /// `|ψ_α⟩` as a state.
    pub fn x_state(&self, alpha: usize) -> QuditState {
        QuditState {
            amplitudes: self.x_basis.column(alpha).into_owned(),
        }
    }

    /// The stretched coherent state `|ψ_0⟩`, polarized along `−x`.
    pub fn css(&self) -> QuditState {
        self.x_state(0)
    }
}

fn build_x_basis(fx: &CMatrix, fy: &CMatrix, fz: &CMatrix) -> CMatrix {
    let dim = fx.nrows();
    let eig = SymmetricEigen::new(fx.clone());
    let lowest = (0..dim)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap_or(0);
    let mut psi0: CVector = eig.eigenvectors.column(lowest).into_owned();
    // fix the global phase: largest component real and positive
    let pivot = (0..dim)
        .max_by(|&a, &b| psi0[a].norm().total_cmp(&psi0[b].norm()))
        .unwrap_or(0);
    let phase = psi0[pivot] / psi0[pivot].norm();
    psi0 /= phase;
    psi0 /= C64::new(psi0.norm(), 0.0);

    let ladder = fy + fz * C64::new(0.0, 1.0);
    let mut basis = CMatrix::zeros(dim, dim);
    basis.set_column(0, &psi0);
    for alpha in 1..dim {
        let next = &ladder * basis.column(alpha - 1);
        let norm = next.norm();
        basis.set_column(alpha, &(next / C64::new(norm, 0.0)));
    }
    basis
}

/// Pure state of one atom, normalized, in the `fz` eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuditState {
    amplitudes: CVector,
}

impl QuditState {
    /// Normalizes `amplitudes`; rejects the zero vector.
    pub fn new(amplitudes: CVector) -> Result<Self, QuditError> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(QuditError::ZeroNorm);
        }
        Ok(Self {
            amplitudes: amplitudes / C64::new(norm, 0.0),
        })
    }

    /// `fz` eigenstate with basis index `k` (`m = F − k`).
    pub fn basis(spin: Spin, k: usize) -> Self {
        let mut amplitudes = CVector::zeros(spin.dim());
        amplitudes[k] = C64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &QuditState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn apply(&self, op: &CMatrix) -> QuditState {
        QuditState {
            amplitudes: op * &self.amplitudes,
        }
    }

    /// `⟨op⟩`, complex in general.
    pub fn expect(&self, op: &CMatrix) -> C64 {
        self.amplitudes.dotc(&(op * &self.amplitudes))
    }

    /// Variance of a Hermitian observable.
    pub fn variance(&self, op: &CMatrix) -> f64 {
        let v = op * &self.amplitudes;
        let mean = self.amplitudes.dotc(&v).re;
        (v.norm_squared() - mean * mean).max(0.0)
    }

    /// Populations `|⟨ψ_α|self⟩|²` in the `fx` eigenbasis.
    pub fn x_populations(&self, ops: &SpinOperators) -> Vec<f64> {
        let coeffs = ops.x_basis().adjoint() * &self.amplitudes;
        coeffs.iter().map(|c| c.norm_sqr()).collect()
    }

    fn check_dim(&self, ops: &SpinOperators) {
        assert_eq!(
            self.dim(),
            ops.dim(),
            "state and operators have different spin"
        );
    }
}

/// `exp(−i·angle·G)` for a Hermitian generator, via eigendecomposition.
pub fn hermitian_propagator(generator: &CMatrix, angle: f64) -> Result<CMatrix, QuditError> {
    let asym = (generator - generator.adjoint())
        .iter()
        .fold(0.0f64, |acc, z| acc.max(z.norm()));
    if asym > HERMITIAN_TOL || !generator.is_square() {
        return Err(QuditError::NotHermitian(asym));
    }
    let herm = (generator + generator.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(herm);
    let phases = CVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&lambda| C64::from_polar(1.0, -angle * lambda)),
    );
    let v = &eig.eigenvectors;
    Ok(v * CMatrix::from_diagonal(&phases) * v.adjoint())
}

/// Parameters of the single-atom twisting stage.
///
/// `mu` is the dimensionless twisting phase so that the propagator is
/// `exp(+i·mu·fy²)`; the positive sign follows from the negative prefactor
/// of the twisting Hamiltonian. `degradation` is a phenomenological loss of
/// squeezing contrast applied at the covariance level, see
/// [`InternalMoments::degraded`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OatParams {
    pub mu: f64,
    pub degradation: f64,
}

impl OatParams {
    pub fn new(mu: f64, degradation: f64) -> Result<Self, QuditError> {
        if !mu.is_finite() {
            return Err(QuditError::NonFinitePhase);
        }
        if !(0.0..=1.0).contains(&degradation) {
            return Err(QuditError::InvalidDegradation(degradation));
        }
        Ok(Self { mu, degradation })
    }

    pub fn ideal(mu: f64) -> Self {
        Self {
            mu,
            degradation: 0.0,
        }
    }
}

/// Applies `exp(+i·μ·fy²)`.
pub fn oat_evolve(ops: &SpinOperators, state: &QuditState, params: &OatParams) -> QuditState {
    state.check_dim(ops);
    if params.mu == 0.0 {
        return state.clone();
    }
    let fy2 = &ops.fy * &ops.fy;
    let u = hermitian_propagator(&fy2, -params.mu).expect("fy² is Hermitian");
    state.apply(&u)
}

/// Larmor rotation `exp(−i·φ·fx)`.
pub fn rotate_x(ops: &SpinOperators, state: &QuditState, phi: f64) -> QuditState {
    state.check_dim(ops);
    if phi == 0.0 {
        return state.clone();
    }
    let u = hermitian_propagator(&ops.fx, phi).expect("fx is Hermitian");
    state.apply(&u)
}

/// Variance of `F_θ = cos θ·fz + sin θ·fy`.
pub fn quadrature_variance(ops: &SpinOperators, state: &QuditState, theta: f64) -> f64 {
    state.check_dim(ops);
    state.variance(&ops.quadrature(theta))
}

/// First moments and transverse covariance of one atom (pure or mixed).
///
/// `mean` is `(⟨fx⟩, ⟨fy⟩, ⟨fz⟩)`; `cov` is the symmetrized covariance of
/// `(fy, fz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalMoments {
    pub mean: Vector3<f64>,
    pub cov: Matrix2<f64>,
}

impl InternalMoments {
    pub fn of_state(ops: &SpinOperators, state: &QuditState) -> Self {
        state.check_dim(ops);
        let psi = state.amplitudes();
        let y = &ops.fy * psi;
        let z = &ops.fz * psi;
        let mx = psi.dotc(&(&ops.fx * psi)).re;
        let my = psi.dotc(&y).re;
        let mz = psi.dotc(&z).re;
        let vyy = y.norm_squared() - my * my;
        let vzz = z.norm_squared() - mz * mz;
        // Re⟨ψ|fy fz|ψ⟩ = Re⟨fy ψ|fz ψ⟩ is the symmetrized product
        let cyz = y.dotc(&z).re - my * mz;
        Self {
            mean: Vector3::new(mx, my, mz),
            cov: Matrix2::new(vyy, cyz, cyz, vzz),
        }
    }

    /// Moments of the incoherent mixture `Σ w_k ρ_k`; weights are
    /// renormalized.
    pub fn mixture(parts: &[(f64, InternalMoments)]) -> Self {
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        let mut mean = Vector3::zeros();
        let mut second = Matrix2::zeros();
        for (w, m) in parts {
            let w = w / total;
            mean += m.mean * w;
            let t = nalgebra::Vector2::new(m.mean.y, m.mean.z);
            second += (m.cov + t * t.transpose()) * w;
        }
        let t = nalgebra::Vector2::new(mean.y, mean.z);
        let cov = second - t * t.transpose();
        Self {
            mean,
            cov: (cov + cov.transpose()) * 0.5,
        }
    }

    /// Contrast loss: the covariance is pulled toward the isotropic
    /// coherent-state value `F/2` by the fraction `degradation`.
    pub fn degraded(&self, spin: Spin, degradation: f64) -> Self {
        let css = Matrix2::identity() * spin.css_variance();
        Self {
            mean: self.mean,
            cov: self.cov * (1.0 - degradation) + css * degradation,
        }
    }

    /// Moments after `exp(−i·φ·fx)`, matching [`rotate_x`].
    pub fn rotated(&self, phi: f64) -> Self {
        let r = larmor_matrix(phi);
        let yz = r * nalgebra::Vector2::new(self.mean.y, self.mean.z);
        Self {
            mean: Vector3::new(self.mean.x, yz.x, yz.y),
            cov: r * self.cov * r.transpose(),
        }
    }

    pub fn quadrature_variance(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        c * c * self.cov[(1, 1)] + s * s * self.cov[(0, 0)] + 2.0 * s * c * self.cov[(0, 1)]
    }

    /// Grid-plus-golden minimization of [`Self::quadrature_variance`] over
    /// `θ ∈ [0, π)`; isotropic covariances report `θ* = 0`.
    pub fn optimal_quadrature(&self) -> (f64, f64) {
        let step = std::f64::consts::PI / QUADRATURE_GRID as f64;
        let mut best = (0usize, f64::INFINITY);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..QUADRATURE_GRID {
            let v = self.quadrature_variance(k as f64 * step);
            if v < best.1 {
                best = (k, v);
            }
            worst = worst.max(v);
        }
        if worst - best.1 <= 1e-12 * worst.abs().max(1.0) {
            return (0.0, self.quadrature_variance(0.0));
        }
        let centre = best.0 as f64 * step;
        let (theta, v) = golden_section(
            |t| self.quadrature_variance(t),
            centre - step,
            centre + step,
            QUADRATURE_TOL,
        );
        let (theta, v) = if v <= best.1 {
            (theta, v)
        } else {
            (centre, best.1)
        };
        (theta.rem_euclid(std::f64::consts::PI), v)
    }

    /// `(F / |⟨fx⟩|)²`, the Wineland penalty for a shortened mean spin.
    pub fn shortening_factor(&self, spin: Spin) -> f64 {
        (spin.value() / self.mean.x.abs()).powi(2)
    }
}

/// The 2×2 matrix acting on `(y, z)` components under `exp(−i·φ·fx)`.
pub fn larmor_matrix(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Squeezed quadrature angle `θ* ∈ [0, π)` and its variance.
pub fn optimal_internal_quadrature(ops: &SpinOperators, state: &QuditState) -> (f64, f64) {
    InternalMoments::of_state(ops, state).optimal_quadrature()
}

/// `|↑⟩`, `|↓⟩` and `ΔFz`, with `fz|↑⟩ − ⟨fz⟩|↑⟩ = ΔFz·|↓⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalStatePair {
    pub up: QuditState,
    pub down: QuditState,
    pub delta_fz: f64,
}

pub fn make_up_down(
    ops: &SpinOperators,
    oat_state: &QuditState,
    phi: f64,
) -> Result<InternalStatePair, QuditError> {
    let up = rotate_x(ops, oat_state, phi);
    let fz_up = &ops.fz * up.amplitudes();
    let mean = up.amplitudes().dotc(&fz_up);
    let residual = fz_up - up.amplitudes() * mean;
    let delta_fz = residual.norm();
    if delta_fz < 1e-12 {
        return Err(QuditError::NoOrthogonalCoupling(delta_fz));
    }
    let down = QuditState {
        amplitudes: residual / C64::new(delta_fz, 0.0),
    };
    Ok(InternalStatePair { up, down, delta_fz })
}

/// Which transverse reference enters the mean-spin rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationDenominator {
    /// `Re⟨ψ_1(t)|fy|ψ_0(t)⟩`, the twisted transverse response.
    #[default]
    OatModified,
    /// The untwisted `⟨ψ_1|fy|ψ_0⟩`, i.e. the bare displacement.
    Bare,
}

/// Linear response of the transverse mean spin to a small displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSpinResponse {
    pub jy_ratio: f64,
    pub jz_ratio: f64,
    /// `atan2(jz_ratio, jy_ratio)`.
    pub rotation_angle: f64,
    /// `⟨ψ_1|fy|ψ_0⟩` without twisting.
    pub jy_bare: f64,
}

impl MeanSpinResponse {
    pub fn angle(&self, denominator: RotationDenominator) -> f64 {
        match denominator {
            RotationDenominator::OatModified => self.rotation_angle,
            RotationDenominator::Bare => self.jz_ratio.atan2(self.jy_bare),
        }
    }
}

/// Rotation of a displaced mean spin produced by twisting.
///
/// Evolves `|ψ_0⟩` and `|ψ_1⟩` with phase `μ`, rotates both by `φ` and
/// returns the real parts of `⟨ψ_1(t)|fz|ψ_0(t)⟩` and `⟨ψ_1(t)|fy|ψ_0(t)⟩`.
pub fn mean_spin_response(ops: &SpinOperators, mu: f64, phi: f64) -> MeanSpinResponse {
    if ops.dim() < 2 {
        return MeanSpinResponse {
            jy_ratio: 0.0,
            jz_ratio: 0.0,
            rotation_angle: 0.0,
            jy_bare: 0.0,
        };
    }
    let params = OatParams::ideal(mu);
    let psi0 = rotate_x(ops, &oat_evolve(ops, &ops.x_state(0), &params), phi);
    let psi1 = rotate_x(ops, &oat_evolve(ops, &ops.x_state(1), &params), phi);
    let jz = psi1.amplitudes().dotc(&(&ops.fz * psi0.amplitudes())).re;
    let jy = psi1.amplitudes().dotc(&(&ops.fy * psi0.amplitudes())).re;
    let jy_bare = ops
        .x_state(1)
        .amplitudes()
        .dotc(&(&ops.fy * ops.x_state(0).amplitudes()))
        .re;
    MeanSpinResponse {
        jy_ratio: jy,
        jz_ratio: jz,
        rotation_angle: jz.atan2(jy),
        jy_bare,
    }
}

/// Rotation angle measured on an explicitly displaced state.
///
/// `|ψ_0⟩` is tipped by `epsilon` about `z` toward `+y`, twisted, rotated
/// by `φ`, and the angle is read off `atan2(⟨fz⟩, ⟨fy⟩)`. Agrees with
/// [`mean_spin_response`] up to `O(ε²)`.
pub fn displaced_rotation_angle(ops: &SpinOperators, mu: f64, phi: f64, epsilon: f64) -> f64 {
    let css = ops.css();
    let tip = |angle: f64| {
        let u = hermitian_propagator(&ops.fz, angle).expect("fz is Hermitian");
        css.apply(&u)
    };
    let mut displaced = tip(epsilon);
    if displaced.expect(&ops.fy).re < 0.0 {
        displaced = tip(-epsilon);
    }
    let evolved = rotate_x(
        ops,
        &oat_evolve(ops, &displaced, &OatParams::ideal(mu)),
        phi,
    );
    let y = evolved.expect(&ops.fy).re;
    let z = evolved.expect(&ops.fz).re;
    z.atan2(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    fn f2() -> SpinOperators {
        make_spin_operators(2.0).unwrap()
    }

    #[test]
    fn spin_half_is_pauli_over_two() {
        let ops = make_spin_operators(0.5).unwrap();
        assert_eq!(ops.fz[(0, 0)].re, 0.5);
        assert_eq!(ops.fz[(1, 1)].re, -0.5);
        assert!((ops.fx[(0, 1)].re - 0.5).abs() < 1e-15);
        assert!((ops.fx[(1, 0)].re - 0.5).abs() < 1e-15);
        assert!((ops.fy[(0, 1)] - C64::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn spin_two_fz_descends() {
        let ops = f2();
        let diag: Vec<f64> = (0..5).map(|k| ops.fz[(k, k)].re).collect();
        assert_eq!(diag, vec![2.0, 1.0, 0.0, -1.0, -2.0]);
    }

    #[test]
    fn commutators_and_casimir() {
        for f in [0.5, 1.0, 1.5, 2.0, 4.0] {
            let ops = make_spin_operators(f).unwrap();
            let i = C64::new(0.0, 1.0);
            let xy = &ops.fx * &ops.fy - &ops.fy * &ops.fx - &ops.fz * i;
            let yz = &ops.fy * &ops.fz - &ops.fz * &ops.fy - &ops.fx * i;
            let zx = &ops.fz * &ops.fx - &ops.fx * &ops.fz - &ops.fy * i;
            assert!(max_abs(&xy) < 1e-12 && max_abs(&yz) < 1e-12 && max_abs(&zx) < 1e-12);
            let casimir = &ops.fx * &ops.fx + &ops.fy * &ops.fy + &ops.fz * &ops.fz
                - CMatrix::identity(ops.dim(), ops.dim()).scale(f * (f + 1.0));
            assert!(max_abs(&casimir) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spin() {
        assert!(make_spin_operators(-1.0).is_err());
        assert!(make_spin_operators(0.3).is_err());
        assert!(make_spin_operators(f64::NAN).is_err());
    }

    #[test]
    fn x_basis_is_fx_eigenbasis_with_ladder_phases() {
        let ops = f2();
        for alpha in 0..5 {
            let psi = ops.x_state(alpha);
            let fx_psi = psi.apply(&ops.fx);
            let expected = psi.amplitudes() * C64::new(alpha as f64 - 2.0, 0.0);
            assert!((fx_psi.amplitudes() - expected).norm() < 1e-12);
        }
        let y10 = ops.x_state(1).inner(&ops.css().apply(&ops.fy));
        assert!(y10.im.abs() < 1e-12 && y10.re > 0.0);
        let z10 = ops.x_state(1).inner(&ops.css().apply(&ops.fz));
        assert!(z10.re.abs() < 1e-12);
    }

    #[test]
    fn propagator_examples() {
        let ops = f2();
        let id = CMatrix::identity(5, 5);
        assert!(max_abs(&(hermitian_propagator(&ops.fz, 0.0).unwrap() - &id)) < 1e-14);
        let u = hermitian_propagator(&ops.fz, PI).unwrap();
        let expected = CMatrix::from_diagonal(&CVector::from_vec(
            [1.0, -1.0, 1.0, -1.0, 1.0]
                .iter()
                .map(|&x| C64::new(x, 0.0))
                .collect(),
        ));
        assert!(max_abs(&(u - expected)) < 1e-12);
        let full = hermitian_propagator(&ops.fx, 2.0 * PI).unwrap();
        assert!(max_abs(&(full - &id)) < 1e-12);
    }

    #[test]
    fn propagator_rejects_non_hermitian() {
        let mut g = CMatrix::zeros(2, 2);
        g[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(
            hermitian_propagator(&g, 1.0),
            Err(QuditError::NotHermitian(_))
        ));
    }

    #[test]
    fn oat_identity_and_fy_eigenstates() {
        let ops = f2();
        let css = ops.css();
        assert_eq!(oat_evolve(&ops, &css, &OatParams::ideal(0.0)), css);
        let eig = SymmetricEigen::new(ops.fy.clone());
        for k in 0..5 {
            let s = QuditState::new(eig.eigenvectors.column(k).into_owned()).unwrap();
            let evolved = oat_evolve(&ops, &s, &OatParams::ideal(0.7));
            let overlap = s.inner(&evolved).norm();
            assert!((overlap - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oat_squeezes_below_css() {
        let ops = f2();
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.1));
        let (_, vmin) = optimal_internal_quadrature(&ops, &s);
        assert!(vmin < 1.0 - 0.1, "vmin = {vmin}");
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oat_preserves_x_parity() {
        let ops = f2();
        for mu in [0.05, 0.3, 1.1, 2.9] {
            let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(mu));
            let pops = s.x_populations(&ops);
            assert!(pops[1] < 1e-24 && pops[3] < 1e-24, "{pops:?}");
        }
    }

    #[test]
    fn rotate_x_examples() {
        let ops = f2();
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.2));
        assert_eq!(rotate_x(&ops, &s, 0.0), s);
        let full = rotate_x(&ops, &s, 2.0 * PI);
        assert!((full.amplitudes() - s.amplitudes()).norm() < 1e-12);
        let quarter = rotate_x(&ops, &s, PI / 2.0);
        assert!((quarter.variance(&ops.fz) - s.variance(&ops.fy)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_variance_examples() {
        let ops = f2();
        for theta in [0.0, 0.4, 1.3, 2.9] {
            assert!((quadrature_variance(&ops, &ops.css(), theta) - 1.0).abs() < 1e-12);
        }
        assert!(quadrature_variance(&ops, &QuditState::basis(ops.spin(), 1), 0.0).abs() < 1e-12);
    }

    #[test]
    fn moments_match_direct_quadrature() {
        let ops = f2();
        let s = rotate_x(
            &ops,
            &oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.33)),
            0.7,
        );
        let m = InternalMoments::of_state(&ops, &s);
        for theta in [0.0, 0.2, 1.0, 2.5] {
            assert!(
                (m.quadrature_variance(theta) - quadrature_variance(&ops, &s, theta)).abs() < 1e-12
            );
        }
        let rotated = InternalMoments::of_state(&ops, &rotate_x(&ops, &s, 0.4));
        let predicted = m.rotated(0.4);
        assert!((rotated.cov - predicted.cov).abs().max() < 1e-12);
        assert!((rotated.mean - predicted.mean).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_covariance_of_quadratures() {
        let ops = f2();
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.4));
        for phi in [0.1, 0.9, 2.2] {
            let r = rotate_x(&ops, &s, phi);
            for theta in [0.0, 0.5, 1.7] {
                let lhs = quadrature_variance(&ops, &r, theta);
                let rhs = quadrature_variance(&ops, &s, theta + phi);
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn css_quadrature_tie_break() {
        let ops = f2();
        let (theta, v) = optimal_internal_quadrature(&ops, &ops.css());
        assert_eq!(theta, 0.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_quadrature_shifts_with_rotation() {
        let ops = f2();
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.05));
        let (theta0, v0) = optimal_internal_quadrature(&ops, &s);
        let phi = 0.3;
        let (theta1, v1) = optimal_internal_quadrature(&ops, &rotate_x(&ops, &s, phi));
        let shift = (theta1 - theta0 + phi).rem_euclid(PI);
        assert!(shift.min(PI - shift) < 1e-8, "shift residual {shift}");
        assert!((v0 - v1).abs() < 1e-12);
    }

    #[test]
    fn up_down_for_css() {
        let ops = f2();
        let pair = make_up_down(&ops, &ops.css(), 0.0).unwrap();
        assert!((pair.delta_fz - 1.0).abs() < 1e-12);
        assert!(pair.up.inner(&pair.down).norm() < 1e-12);
        assert!((pair.delta_fz.powi(2) - quadrature_variance(&ops, &pair.up, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn up_down_invariants_and_parity() {
        let ops = f2();
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(0.3));
        let pair = make_up_down(&ops, &s, 1.1).unwrap();
        let mean = pair.up.expect(&ops.fz);
        let lhs = &ops.fz * pair.up.amplitudes() - pair.up.amplitudes() * mean;
        let rhs = pair.down.amplitudes() * C64::new(pair.delta_fz, 0.0);
        assert!((lhs - rhs).norm() < 1e-10);
        assert!(pair.up.inner(&pair.down).norm() < 1e-10);
        let up = pair.up.x_populations(&ops);
        let down = pair.down.x_populations(&ops);
        assert!(up[1] + up[3] < 1e-20);
        assert!(down[0] + down[2] + down[4] < 1e-20);
    }

    #[test]
    fn up_down_rejects_fz_eigenstate() {
        let ops = f2();
        let err = make_up_down(&ops, &QuditState::basis(ops.spin(), 0), 0.0).unwrap_err();
        assert!(matches!(err, QuditError::NoOrthogonalCoupling(_)));
    }

    #[test]
    fn mean_spin_response_zero_twist() {
        let ops = f2();
        let r = mean_spin_response(&ops, 0.0, 0.0);
        assert_eq!(r.rotation_angle, 0.0);
        assert!((r.jy_ratio - 1.0).abs() < 1e-12);
        assert!((r.jy_bare - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_state_matches_linear_response() {
        let ops = f2();
        for mu in [0.01, 0.1, 0.25] {
            let r = mean_spin_response(&ops, mu, 0.0);
            let a = displaced_rotation_angle(&ops, mu, 0.0, 1e-4);
            let b = displaced_rotation_angle(&ops, mu, 0.0, 1e-5);
            assert!((a - r.rotation_angle).abs() < 1e-6);
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oat_params_validation() {
        assert!(OatParams::new(0.1, 1.2).is_err());
        assert!(OatParams::new(f64::INFINITY, 0.0).is_err());
        assert!(OatParams::new(0.1, 0.5).is_ok());
    }
}
