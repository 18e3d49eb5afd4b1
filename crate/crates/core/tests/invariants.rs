//! Property tests for the algebraic invariants of the Gaussian model, the
//! qudit layer and the retrodiction formulas.

use coopsqueeze::*;
use nalgebra::{Matrix2, Matrix3, Vector2};
use proptest::prelude::*;

fn spin2() -> Spin {
    Spin::from_twice(4)
}

fn ensemble(vy: f64, vz: f64, rho: f64) -> GaussianEnsemble {
    let n = 1_000_000u64;
    let pnl = n as f64 * spin2().css_variance();
    let c = rho * (vy * vz).sqrt();
    GaussianEnsemble::new(
        n,
        spin2(),
        -(n as f64) * 1.9,
        Vector2::zeros(),
        Matrix2::new(vy, c, c, vz) * pnl,
    )
    .unwrap()
}

fn psd3(a: [f64; 9]) -> Matrix3<f64> {
    let m = Matrix3::from_row_slice(&a);
    m * m.transpose() + Matrix3::identity() * 1e-6
}

proptest! {
    #[test]
    fn combination_never_worse_than_either(xi2_nl in 0.05f64..1.0, kappa2 in 0.0f64..20.0) {
        let tot = xi2_tot(xi2_nl, kappa2);
        prop_assert!(tot <= xi2_nl * (1.0 + 1e-15));
        prop_assert!(tot <= xi2_qnd(kappa2) * (1.0 + 1e-15));
        prop_assert!(xi2_tot(xi2_nl, kappa2 + 0.1) < tot);
    }

    #[test]
    fn bracket_orders_product_below_combination(xi2_nl in 0.05f64..0.99, kappa2 in 0.01f64..20.0) {
        let b = SqueezingBracket::new(xi2_nl, kappa2);
        prop_assert!(b.db_sum_db <= b.combined_db);
        prop_assert_eq!(b.lower_db(), b.db_sum_db);
        prop_assert!(b.overlaps(b.combined_db, 0.0));
    }

    #[test]
    fn qnd_update_is_kalman(vy in 0.2f64..5.0, vz in 0.2f64..5.0, rho in -0.9f64..0.9, kappa2 in 0.0f64..10.0) {
        let ens = ensemble(vy, vz, rho);
        let c = QndCoupling::new(kappa2, 1.0, ens.pnl).unwrap();
        let (post, s) = qnd_condition(&ens, &c, Backaction::Evaded).unwrap();
        let v = ens.var_jz();
        let expected = 1.0 / (1.0 / v + kappa2 / ens.pnl);
        prop_assert!((post.var_jz() - expected).abs() <= 1e-9 * v);
        prop_assert!(post.var_jz() <= v * (1.0 + 1e-12));
        prop_assert!((s - (1.0 + c.gain * c.gain * v)).abs() <= 1e-9 * s);
        prop_assert!(post.cov.determinant() >= -1e-9 * post.cov.trace());
    }

    #[test]
    fn unevaded_probe_adds_noise(vz in 0.2f64..5.0, kappa2 in 0.01f64..10.0) {
        let ens = ensemble(1.0, vz, 0.0);
        let c = QndCoupling::new(kappa2, 1.0, ens.pnl).unwrap();
        let (evaded, _) = qnd_condition(&ens, &c, Backaction::Evaded).unwrap();
        let (unevaded, _) = qnd_condition(&ens, &c, Backaction::Unevaded).unwrap();
        prop_assert!(unevaded.var_jz() > evaded.var_jz());
        prop_assert!(unevaded.var_jy() > ens.var_jy());
    }

    #[test]
    fn larmor_rotation_is_orthogonal(vy in 0.2f64..5.0, vz in 0.2f64..5.0, rho in -0.9f64..0.9, phi in -7.0f64..7.0) {
        let ens = ensemble(vy, vz, rho);
        let r = larmor_rotate(&ens, phi);
        let back = larmor_rotate(&r, -phi);
        let scale = ens.cov.norm();
        prop_assert!((r.cov.trace() - ens.cov.trace()).abs() <= 1e-12 * scale);
        prop_assert!((r.cov.determinant() - ens.cov.determinant()).abs() <= 1e-10 * scale * scale);
        prop_assert!((back.cov - ens.cov).norm() <= 1e-12 * scale);
    }

    #[test]
    fn decay_relaxes_toward_projection_noise(vz in 0.05f64..5.0, dt in 0.0f64..0.2) {
        let ens = ensemble(1.0, vz, 0.0);
        let out = decay_channel(&ens, dt, 0.037).unwrap();
        let before = (ens.var_jz() - ens.pnl).abs();
        let after = (out.var_jz() - ens.pnl).abs();
        prop_assert!(after <= before * (1.0 + 1e-12) + 1e-9 * ens.pnl);
        prop_assert!(out.jx.abs() <= ens.jx.abs());
    }

    #[test]
    fn retrodiction_ordering(a in prop::array::uniform9(-3.0f64..3.0)) {
        let c = psd3(a);
        let two = conditional_variance_two_pulse(c[(0, 0)], c[(1, 1)], c[(0, 1)]).unwrap();
        let three = conditional_variance_three_pulse(&c).unwrap().variance;
        let tol = 1e-10 * c[(1, 1)];
        prop_assert!(three <= two + tol);
        prop_assert!(two <= c[(1, 1)] + tol);
        prop_assert!(three >= 0.0);
    }

    #[test]
    fn quadrature_rotation_shifts_angle(mu in 0.0f64..1.5, phi in -3.2f64..3.2, theta in -3.2f64..3.2) {
        let ops = SpinOperators::new(spin2());
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(mu));
        let lhs = quadrature_variance(&ops, &rotate_x(&ops, &s, phi), theta);
        let rhs = quadrature_variance(&ops, &s, theta + phi);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn twisting_is_unitary_and_keeps_fy(mu in -3.0f64..3.0, d in 0.0f64..1.0) {
        let ops = SpinOperators::new(spin2());
        let css = ops.css();
        let s = oat_evolve(&ops, &css, &OatParams::new(mu, d).unwrap());
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        prop_assert!((s.expect(&ops.fy).re - css.expect(&ops.fy).re).abs() < 1e-12);
        prop_assert!((s.variance(&ops.fy) - css.variance(&ops.fy)).abs() < 1e-12);
    }

    #[test]
    fn optimal_quadrature_is_minimal(mu in 0.0f64..1.5, theta in 0.0f64..3.2) {
        let ops = SpinOperators::new(spin2());
        let s = oat_evolve(&ops, &ops.css(), &OatParams::ideal(mu));
        let (best, var) = optimal_internal_quadrature(&ops, &s);
        prop_assert!(var <= quadrature_variance(&ops, &s, theta) + 1e-12);
        prop_assert!((quadrature_variance(&ops, &s, best) - var).abs() < 1e-12);
    }

    #[test]
    fn scattering_limit_monotone(x in 0.01f64..1.0, alpha in 0.0f64..10.0) {
        prop_assert!(scattering_limit(x, alpha) < scattering_limit(x * 1.01, alpha));
        prop_assert!(scattering_limit(x, alpha + 0.1) < scattering_limit(x, alpha));
    }
}

#[test]
fn coherent_state_is_unsqueezed() {
    for twice in 1..=8 {
        let ops = SpinOperators::new(Spin::from_twice(twice));
        let m = InternalMoments::of_state(&ops, &ops.css());
        let spin = ops.spin();
        let xi2 = m.quadrature_variance(0.0) * m.shortening_factor(spin) / spin.css_variance();
        assert!((xi2 - 1.0).abs() < 1e-12, "F = {}: {xi2}", spin.value());
    }
}
