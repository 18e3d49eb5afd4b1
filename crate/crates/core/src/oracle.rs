//! Brute-force many-atom simulation in the full `(2F+1)^N` tensor space.
//!
//! Used to check the pair-excitation picture of weak QND measurement and
//! the Gaussian conditioning model on a handful of atoms. Site 0 is the
//! most significant digit of the flat index. Nothing here assumes
//! permutation symmetry; it is tested instead.
//!
//! The outcome-zero Kraus operator `exp(−λ·Jz²)` is matched to the Gaussian
//! measurement strength by requiring the same first-order variance
//! reduction on a coherent state. A Gaussian-distributed `Jz` of variance
//! `V` weighted by `|exp(−λ Jz²)|² = exp(−2λ Jz²)` has posterior variance
//! `1/(1/V + 4λ)`; the Gaussian model gives `1/(1/V + κ̃²/pnl)`, hence
//! `κ̃² = 4·λ·pnl`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::gaussian::{ensemble_from_internal, qnd_condition, Backaction, QndCoupling};
use crate::qudit::{
    CMatrix, CVector, InternalMoments, InternalStatePair, QuditError, QuditState, Spin,
    SpinOperators,
};

/// Largest supported tensor dimension (`5⁶`, six spin-2 atoms).
pub const MAX_DIMENSION: usize = 15_625;
pub const MAX_ATOMS: usize = 6;

type C64 = Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{n_atoms} atoms of spin {spin} exceed the tensor-space limit ({MAX_ATOMS} atoms, dimension {MAX_DIMENSION})")]
    TooLarge { n_atoms: usize, spin: f64 },
    #[error("need at least {min} atoms, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("Kraus projection left norm {0:e}")]
    VanishingNorm(f64),
    #[error("measurement exponent must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Qudit(#[from] QuditError),
    #[error(transparent)]
    Gaussian(#[from] crate::gaussian::GaussianError),
}

fn check_size(n_atoms: usize, spin: Spin, min: usize) -> Result<usize, OracleError> {
    if n_atoms < min {
        return Err(OracleError::TooFew { min, got: n_atoms });
    }
    let too_large = OracleError::TooLarge {
        n_atoms,
        spin: spin.value(),
    };
    if n_atoms > MAX_ATOMS {
        return Err(too_large);
    }
    let dim = spin
        .dim()
        .checked_pow(n_atoms as u32)
        .ok_or(too_large.clone())?;
    if dim > MAX_DIMENSION {
        return Err(too_large);
    }
    Ok(dim)
}

/// Normalized state of `n_atoms` spins.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyState {
    n_atoms: usize,
    spin: Spin,
    amplitudes: CVector,
}

impl ManyBodyState {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &ManyBodyState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// Exchanges the single-atom factors on sites `a` and `b`.
    pub fn swap_sites(&self, a: usize, b: usize) -> ManyBodyState {
        let d = self.spin.dim();
        let n = self.n_atoms;
        let mut out = CVector::zeros(self.amplitudes.len());
        let mut digits = vec![0usize; n];
        for idx in 0..self.amplitudes.len() {
            decode(idx, d, &mut digits);
            digits.swap(a, b);
            out[encode(&digits, d)] = self.amplitudes[idx];
        }
        ManyBodyState {
            amplitudes: out,
            ..self.clone()
        }
    }

    /// Applies a single-atom operator on one site.
    pub fn apply_site(&self, site: usize, op: &CMatrix) -> CVector {
        apply_site(&self.amplitudes, self.n_atoms, self.spin.dim(), site, op)
    }

    /// Mean and variance of `Jz`, which is diagonal in the product basis.
    pub fn jz_moments(&self) -> (f64, f64) {
        let jz = jz_diagonal(self.n_atoms, self.spin);
        let norm2 = self.amplitudes.norm_squared();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (a, &j) in self.amplitudes.iter().zip(&jz) {
            let p = a.norm_sqr();
            m1 += p * j;
            m2 += p * j * j;
        }
        let mean = m1 / norm2;
        (mean, (m2 / norm2 - mean * mean).max(0.0))
    }

    /// Total weight on product configurations (in the `fx` eigenbasis of
    /// every site) with exactly `count` sites of odd `|ψ_α⟩` index.
    pub fn odd_site_weight(&self, ops: &SpinOperators, count: usize) -> f64 {
        let mut amps = self.amplitudes.clone();
        let to_x = ops.x_basis().adjoint();
        for site in 0..self.n_atoms {
            amps = apply_site(&amps, self.n_atoms, self.spin.dim(), site, &to_x);
        }
        let d = self.spin.dim();
        let mut digits = vec![0usize; self.n_atoms];
        let mut total = 0.0;
        for (idx, a) in amps.iter().enumerate() {
            decode(idx, d, &mut digits);
            if digits.iter().filter(|&&k| k % 2 == 1).count() == count {
                total += a.norm_sqr();
            }
        }
        total / amps.norm_squared()
    }
}

fn decode(mut idx: usize, d: usize, digits: &mut [usize]) {
    for slot in digits.iter_mut().rev() {
        *slot = idx % d;
        idx /= d;
    }
}

fn encode(digits: &[usize], d: usize) -> usize {
    digits.iter().fold(0, |acc, &k| acc * d + k)
}

fn apply_site(amps: &CVector, n: usize, d: usize, site: usize, op: &CMatrix) -> CVector {
    let stride = d.pow((n - 1 - site) as u32);
    let block = stride * d;
    let mut out = CVector::zeros(amps.len());
    for base in (0..amps.len()).step_by(block) {
        for low in 0..stride {
            for r in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..d {
                    let x = op[(r, c)];
                    if x != C64::new(0.0, 0.0) {
                        acc += x * amps[base + c * stride + low];
                    }
                }
                out[base + r * stride + low] = acc;
            }
        }
    }
    out
}

fn jz_diagonal(n_atoms: usize, spin: Spin) -> Vec<f64> {
    let d = spin.dim();
    let len = d.pow(n_atoms as u32);
    let mut digits = vec![0usize; n_atoms];
    (0..len)
        .map(|idx| {
            decode(idx, d, &mut digits);
            digits.iter().map(|&k| spin.m(k)).sum()
        })
        .collect()
}

/// `|single⟩^⊗N`.
pub fn product_state(n_atoms: usize, single: &QuditState) -> Result<ManyBodyState, OracleError> {
    let spin = Spin::from_twice(single.dim() as u32 - 1);
    check_size(n_atoms, spin, 1)?;
    let mut amps = single.amplitudes().clone();
    for _ in 1..n_atoms {
        amps = amps.kronecker(single.amplitudes());
    }
    let norm = amps.norm();
    Ok(ManyBodyState {
        n_atoms,
        spin,
        amplitudes: amps / C64::new(norm, 0.0),
    })
}

/// `Σ_i op^{(i)}`, applied matrix-free.
#[derive(Debug, Clone)]
pub struct CollectiveOperator {
    n_atoms: usize,
    single: CMatrix,
}

pub fn collective_operator(
    n_atoms: usize,
    single_op: &CMatrix,
) -> Result<CollectiveOperator, OracleError> {
    let spin = Spin::from_twice(single_op.nrows() as u32 - 1);
    check_size(n_atoms, spin, 1)?;
    Ok(CollectiveOperator {
        n_atoms,
        single: single_op.clone(),
    })
}

impl CollectiveOperator {
    pub fn apply(&self, state: &ManyBodyState) -> CVector {
        let d = self.single.nrows();
        let mut out = CVector::zeros(state.amplitudes.len());
        for site in 0..self.n_atoms {
            out += apply_site(&state.amplitudes, self.n_atoms, d, site, &self.single);
        }
        out
    }

    /// Dense matrix; only for small spaces (dimension ≤ 625).
    pub fn to_dense(&self) -> Option<CMatrix> {
        let d = self.single.nrows();
        let dim = d.checked_pow(self.n_atoms as u32)?;
        if dim > 625 {
            return None;
        }
        let mut total = CMatrix::zeros(dim, dim);
        for site in 0..self.n_atoms {
            let mut term = CMatrix::identity(1, 1);
            for k in 0..self.n_atoms {
                term = if k == site {
                    term.kronecker(&self.single)
                } else {
                    term.kronecker(&CMatrix::identity(d, d))
                };
            }
            total += term;
        }
        Some(total)
    }

    /// `⟨state|O|state⟩`.
    pub fn expect(&self, state: &ManyBodyState) -> C64 {
        state.amplitudes.dotc(&self.apply(state))
    }
}

/// Strength of the outcome-zero Kraus operator `exp(−λ·Jz²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakMeasurementParams {
    pub lambda: f64,
    /// `κ̃² = 4·λ·pnl`.
    pub kappa2_equiv: f64,
}

impl WeakMeasurementParams {
    pub fn from_kappa2(kappa2: f64, pnl: f64) -> Result<Self, OracleError> {
        let lambda = kappa2 / (4.0 * pnl);
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(OracleError::InvalidLambda(lambda));
        }
        Ok(Self {
            lambda,
            kappa2_equiv: kappa2,
        })
    }

    pub fn from_lambda(lambda: f64, pnl: f64) -> Result<Self, OracleError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(OracleError::InvalidLambda(lambda));
        }
        Ok(Self {
            lambda,
            kappa2_equiv: 4.0 * lambda * pnl,
        })
    }
}

/// `exp(−λ·Jz²)|state⟩`, renormalized.
pub fn apply_outcome_zero_kraus(
    state: &ManyBodyState,
    params: &WeakMeasurementParams,
) -> Result<ManyBodyState, OracleError> {
    let jz = jz_diagonal(state.n_atoms, state.spin);
    let mut amps = state.amplitudes.clone();
    for (a, j) in amps.iter_mut().zip(&jz) {
        *a *= (-params.lambda * j * j).exp();
    }
    let norm = amps.norm();
    if !(norm > 1e-10) {
        return Err(OracleError::VanishingNorm(norm));
    }
    Ok(ManyBodyState {
        amplitudes: amps / C64::new(norm, 0.0),
        ..state.clone()
    })
}

fn pnl(n_atoms: usize, spin: Spin) -> f64 {
    n_atoms as f64 * spin.css_variance()
}

/// Basis vector `|↓⟩_a|↓⟩_b ⊗ |↑⟩` elsewhere.
fn pair_configuration(n_atoms: usize, pair: &InternalStatePair, a: usize, b: usize) -> CVector {
    let mut amps = CVector::from_element(1, C64::new(1.0, 0.0));
    for site in 0..n_atoms {
        let factor = if site == a || site == b {
            &pair.down
        } else {
            &pair.up
        };
        amps = amps.kronecker(factor.amplitudes());
    }
    amps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairExcitationCheck {
    /// `1 − |⟨ansatz|exact⟩|` for the normalized states.
    pub overlap_error: f64,
    /// Exact pair amplitude over the predicted one; 1 when `κ̃² = 0`.
    pub amplitude_ratio: f64,
}

/// Compares the weakly measured product state with the pair-excitation
/// ansatz `|↑⟩^N − c·Σ_{i≠j} |↓⟩_i|↓⟩_j|↑⟩^{N−2}`.
///
/// The sum runs over ordered site pairs, so each unordered pair carries
/// `2c`; with `c = κ̃²(ΔFz)²/(4N)` this is `κ̃²(ΔFz)²/(2N)`. For general `F`
/// the coefficient per unordered pair is `κ̃²(ΔFz)²/(2·pnl)`, which is the
/// same thing at `F = 2` where `pnl = N`.
pub fn pair_excitation_check(
    n_atoms: usize,
    pair: &InternalStatePair,
    kappa2: f64,
) -> Result<PairExcitationCheck, OracleError> {
    let spin = Spin::from_twice(pair.up.dim() as u32 - 1);
    check_size(n_atoms, spin, 2)?;
    let start = product_state(n_atoms, &pair.up)?;
    let params = WeakMeasurementParams::from_kappa2(kappa2, pnl(n_atoms, spin))?;
    let exact = apply_outcome_zero_kraus(&start, &params)?;

    let per_pair = -kappa2 * pair.delta_fz.powi(2) / (2.0 * pnl(n_atoms, spin));
    let mut ansatz = start.amplitudes.clone();
    for a in 0..n_atoms {
        for b in (a + 1)..n_atoms {
            ansatz += pair_configuration(n_atoms, pair, a, b) * C64::new(per_pair, 0.0);
        }
    }
    let ansatz_norm = ansatz.norm();
    let overlap = ansatz.dotc(&exact.amplitudes).norm() / ansatz_norm;
    let overlap_error = (1.0 - overlap).max(0.0);

    let amplitude_ratio = if kappa2 == 0.0 {
        1.0
    } else {
        let up_amp = start.amplitudes.dotc(&exact.amplitudes);
        let pair_amp = pair_configuration(n_atoms, pair, 0, 1).dotc(&exact.amplitudes);
        (pair_amp / up_amp).re / per_pair
    };
    Ok(PairExcitationCheck {
        overlap_error,
        amplitude_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceCheck {
    pub exact_var: f64,
    /// `N(ΔFz)² − κ̃²·N²(ΔFz)⁴/pnl`, i.e. `N(ΔFz)² − κ̃²N(ΔFz)⁴` at `F = 2`.
    pub predicted_var: f64,
}

impl VarianceCheck {
    pub fn relative_discrepancy(&self) -> f64 {
        (self.exact_var - self.predicted_var).abs() / self.exact_var
    }
}

/// Exact post-measurement `Var(Jz)` against the first-order formula.
pub fn variance_formula_check(
    n_atoms: usize,
    pair: &InternalStatePair,
    kappa2: f64,
) -> Result<VarianceCheck, OracleError> {
    let spin = Spin::from_twice(pair.up.dim() as u32 - 1);
    check_size(n_atoms, spin, 1)?;
    let start = product_state(n_atoms, &pair.up)?;
    let p = pnl(n_atoms, spin);
    let params = WeakMeasurementParams::from_kappa2(kappa2, p)?;
    let exact = apply_outcome_zero_kraus(&start, &params)?;
    let v = n_atoms as f64 * pair.delta_fz.powi(2);
    Ok(VarianceCheck {
        exact_var: exact.jz_moments().1,
        predicted_var: v - kappa2 * v * v / p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianEquivalence {
    pub exact_var: f64,
    pub gaussian_var: f64,
}

impl GaussianEquivalence {
    pub fn relative_error(&self) -> f64 {
        (self.exact_var - self.gaussian_var).abs() / self.exact_var
    }
}

/// Conditional `Var(Jz)` from the Gaussian model against the exact oracle.
pub fn gaussian_equivalence(
    ops: &SpinOperators,
    n_atoms: usize,
    pair: &InternalStatePair,
    kappa2: f64,
) -> Result<GaussianEquivalence, OracleError> {
    let spin = ops.spin();
    check_size(n_atoms, spin, 1)?;
    let start = product_state(n_atoms, &pair.up)?;
    let p = pnl(n_atoms, spin);
    let exact = apply_outcome_zero_kraus(&start, &WeakMeasurementParams::from_kappa2(kappa2, p)?)?;
    let moments = InternalMoments::of_state(ops, &pair.up);
    let ens = ensemble_from_internal(ops, n_atoms as u64, pair, &moments.cov)?;
    let coupling = QndCoupling::new(kappa2, 1.0, ens.pnl)?;
    let (post, _) = qnd_condition(&ens, &coupling, Backaction::Evaded)?;
    Ok(GaussianEquivalence {
        exact_var: exact.jz_moments().1,
        gaussian_var: post.var_jz(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qudit::{
        make_spin_operators, make_up_down, oat_evolve, optimal_internal_quadrature, OatParams,
    };

    fn ops() -> SpinOperators {
        make_spin_operators(2.0).unwrap()
    }

    fn squeezed_pair(ops: &SpinOperators, mu: f64) -> InternalStatePair {
        let s = oat_evolve(ops, &ops.css(), &OatParams::ideal(mu));
        let (theta, _) = optimal_internal_quadrature(ops, &s);
        make_up_down(ops, &s, theta).unwrap()
    }

    #[test]
    fn product_state_basics() {
        let ops = ops();
        let css = ops.css();
        let one = product_state(1, &css).unwrap();
        assert!((one.amplitudes() - css.amplitudes()).norm() < 1e-15);
        let tilted =
            crate::qudit::rotate_x(&ops, &oat_evolve(&ops, &css, &OatParams::ideal(0.2)), 0.3);
        let two = product_state(2, &tilted).unwrap();
        let jz = collective_operator(2, &ops.fz).unwrap();
        assert!((jz.expect(&two).re - 2.0 * tilted.expect(&ops.fz).re).abs() < 1e-12);
        let three = product_state(3, &css).unwrap();
        assert!((three.jz_moments().1 - 3.0).abs() < 1e-12);
        assert!(product_state(7, &css).is_err());
        assert!(product_state(6, &css).is_ok());
    }

    #[test]
    fn collective_algebra() {
        let ops = ops();
        let jx = collective_operator(2, &ops.fx).unwrap().to_dense().unwrap();
        let jy = collective_operator(2, &ops.fy).unwrap().to_dense().unwrap();
        let jz = collective_operator(2, &ops.fz).unwrap().to_dense().unwrap();
        let comm = &jx * &jy - &jy * &jx - &jz * C64::new(0.0, 1.0);
        assert!(comm.iter().all(|z| z.norm() < 1e-12));
        let single = collective_operator(1, &ops.fx).unwrap().to_dense().unwrap();
        assert!((single - &ops.fx).iter().all(|z| z.norm() < 1e-15));
        let top = ManyBodyState {
            n_atoms: 2,
            spin: ops.spin(),
            amplitudes: product_state(2, &QuditState::basis(ops.spin(), 0))
                .unwrap()
                .amplitudes,
        };
        let applied = collective_operator(2, &ops.fz).unwrap().apply(&top);
        assert!((applied - top.amplitudes() * C64::new(4.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn kraus_examples() {
        let ops = ops();
        let css4 = product_state(4, &ops.css()).unwrap();
        let zero = WeakMeasurementParams::from_lambda(0.0, 4.0).unwrap();
        assert_eq!(apply_outcome_zero_kraus(&css4, &zero).unwrap(), css4);

        let eigen = product_state(3, &QuditState::basis(ops.spin(), 1)).unwrap();
        let p = WeakMeasurementParams::from_lambda(0.05, 3.0).unwrap();
        let after = apply_outcome_zero_kraus(&eigen, &p).unwrap();
        assert!((after.inner(&eigen).norm() - 1.0).abs() < 1e-12);

        // small λ: Var' ≈ V − 4λV² − 2λκ₄ + O(λ²), κ₄ the fourth cumulant of Jz
        let (_, v) = css4.jz_moments();
        let jz = jz_diagonal(4, ops.spin());
        let m4: f64 = css4
            .amplitudes()
            .iter()
            .zip(&jz)
            .map(|(a, j)| a.norm_sqr() * j.powi(4))
            .sum();
        let k4 = m4 - 3.0 * v * v;
        assert!(k4 < 0.0);
        let lambda = 1e-4;
        let after = apply_outcome_zero_kraus(
            &css4,
            &WeakMeasurementParams::from_lambda(lambda, 4.0).unwrap(),
        )
        .unwrap();
        let predicted = v - 4.0 * lambda * v * v - 2.0 * lambda * k4;
        assert!((after.jz_moments().1 - predicted).abs() < 50.0 * lambda * lambda * v.powi(3));
        assert!(after.jz_moments().1 < v);
    }

    #[test]
    fn kraus_rejects_vanishing_norm() {
        let ops = ops();
        let top = product_state(6, &QuditState::basis(ops.spin(), 0)).unwrap();
        let p = WeakMeasurementParams::from_lambda(1.0, 6.0).unwrap();
        assert!(matches!(
            apply_outcome_zero_kraus(&top, &p),
            Err(OracleError::VanishingNorm(_))
        ));
    }

    #[test]
    fn lambda_kappa_mapping() {
        let p = WeakMeasurementParams::from_kappa2(0.04, 4.0).unwrap();
        assert!((p.kappa2_equiv - 4.0 * p.lambda * 4.0).abs() < 1e-12);
        let q = WeakMeasurementParams::from_lambda(p.lambda, 4.0).unwrap();
        assert!((q.kappa2_equiv - 0.04).abs() < 1e-12);
    }

    #[test]
    fn pair_excitation_zero_coupling() {
        let ops = ops();
        let pair = make_up_down(&ops, &ops.css(), 0.0).unwrap();
        let r = pair_excitation_check(4, &pair, 0.0).unwrap();
        assert!(r.overlap_error < 1e-15);
        assert_eq!(r.amplitude_ratio, 1.0);
    }

    #[test]
    fn pair_excitation_css_amplitude() {
        let ops = ops();
        let pair = make_up_down(&ops, &ops.css(), 0.0).unwrap();
        let r = pair_excitation_check(4, &pair, 0.01).unwrap();
        assert!((r.amplitude_ratio - 1.0).abs() < 0.01, "{r:?}");
    }

    #[test]
    fn pair_excitation_error_is_fourth_order() {
        let ops = ops();
        let pair = squeezed_pair(&ops, 0.2);
        // halving κ quarters κ̃²
        let a = pair_excitation_check(4, &pair, 0.02).unwrap().overlap_error;
        let b = pair_excitation_check(4, &pair, 0.005)
            .unwrap()
            .overlap_error;
        let ratio = a / b;
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn variance_formula_zero_coupling() {
        let ops = ops();
        let pair = squeezed_pair(&ops, 0.2);
        let r = variance_formula_check(4, &pair, 0.0).unwrap();
        assert!((r.exact_var - r.predicted_var).abs() < 1e-12);
        assert!((r.predicted_var - 4.0 * pair.delta_fz.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn variance_formula_squeezed_pair() {
        let ops = ops();
        let pair = squeezed_pair(&ops, 0.2);
        let r = variance_formula_check(4, &pair, 0.02).unwrap();
        assert!(r.relative_discrepancy() < 1e-3, "{r:?}");
    }

    #[test]
    fn variance_formula_css_is_kurtosis_limited() {
        // For a coherent state Jz is binomial with a negative fourth cumulant;
        // the first-order formula misses ~4λ/V of relative variance.
        let ops = ops();
        let pair = make_up_down(&ops, &ops.css(), 0.0).unwrap();
        let r = variance_formula_check(4, &pair, 0.02).unwrap();
        assert!(r.relative_discrepancy() < 2e-3, "{r:?}");
    }

    #[test]
    fn squeezing_weakens_variance_reduction() {
        let ops = ops();
        let css = make_up_down(&ops, &ops.css(), 0.0).unwrap();
        let sq = squeezed_pair(&ops, 0.2);
        let drop = |pair: &InternalStatePair| {
            let r = variance_formula_check(4, pair, 0.02).unwrap();
            4.0 * pair.delta_fz.powi(2) - r.exact_var
        };
        assert!(drop(&sq) < drop(&css));
    }

    #[test]
    fn gaussian_model_agrees() {
        let ops = ops();
        for pair in [
            make_up_down(&ops, &ops.css(), 0.0).unwrap(),
            squeezed_pair(&ops, 0.2),
        ] {
            for k in [0.01, 0.05, 0.1] {
                let r = gaussian_equivalence(&ops, 4, &pair, k).unwrap();
                assert!(r.relative_error() < 0.02, "{k}: {r:?}");
            }
        }
    }

    #[test]
    fn post_measurement_state_is_permutation_symmetric() {
        let ops = ops();
        let pair = squeezed_pair(&ops, 0.3);
        let start = product_state(4, &pair.up).unwrap();
        let exact = apply_outcome_zero_kraus(
            &start,
            &WeakMeasurementParams::from_kappa2(0.1, 4.0).unwrap(),
        )
        .unwrap();
        for (a, b) in [(0, 1), (0, 3), (1, 2)] {
            let swapped = exact.swap_sites(a, b);
            let diff = (swapped.amplitudes() - exact.amplitudes()).norm();
            assert!(diff < 1e-10);
        }
    }

    #[test]
    fn pair_component_has_even_odd_site_count() {
        let ops = ops();
        let pair = squeezed_pair(&ops, 0.3);
        let start = product_state(4, &pair.up).unwrap();
        let exact = apply_outcome_zero_kraus(
            &start,
            &WeakMeasurementParams::from_kappa2(0.1, 4.0).unwrap(),
        )
        .unwrap();
        assert!(exact.odd_site_weight(&ops, 1) < 1e-20);
        assert!(exact.odd_site_weight(&ops, 3) < 1e-20);
        assert!(exact.odd_site_weight(&ops, 2) > 0.0);
    }

    #[test]
    fn dimension_guard() {
        let ops3 = make_spin_operators(3.0).unwrap();
        assert!(product_state(5, &ops3.css()).is_err());
        assert!(product_state(4, &ops3.css()).is_ok());
    }
}
