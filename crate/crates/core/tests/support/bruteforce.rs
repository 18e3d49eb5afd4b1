//! Independent dense (μ, θ) scan of the single-atom Wineland parameter.
//!
//! Shares no code with the crate: spin matrices, the coherent state and the
//! matrix exponential (Taylor series with scaling and squaring) are built
//! here from scratch.

use num_complex::Complex64 as C;

pub const MU_POINTS: usize = 10_000;
pub const THETA_POINTS: usize = 3_600;
pub const ZOOM_LEVELS: usize = 3;

type M = Vec<Vec<C>>;

fn zeros(d: usize) -> M {
    vec![vec![C::new(0.0, 0.0); d]; d]
}

fn matmul(a: &M, b: &M) -> M {
    let d = a.len();
    let mut out = zeros(d);
    for i in 0..d {
        for k in 0..d {
            let x = a[i][k];
            if x.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i][j] += x * b[k][j];
            }
        }
    }
    out
}

fn matvec(a: &M, v: &[C]) -> Vec<C> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn expm(a: &M) -> M {
    let d = a.len();
    let norm: f64 = a
        .iter()
        .map(|r| r.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled: M = a
        .iter()
        .map(|r| r.iter().map(|x| x * scale).collect())
        .collect();
    let mut result = zeros(d);
    for (i, row) in result.iter_mut().enumerate() {
        row[i] = C::new(1.0, 0.0);
    }
    let mut term = result.clone();
    for k in 1..30 {
        term = matmul(&term, &scaled);
        for r in term.iter_mut() {
            for x in r.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..d {
            for j in 0..d {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

pub struct Spin {
    f: f64,
    fx: M,
    fy: M,
    fz: M,
    fy2: M,
    css_x: Vec<C>,
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Spin {
    pub fn new(twice_f: usize) -> Self {
        let f = twice_f as f64 / 2.0;
        let d = twice_f + 1;
        let m = |k: usize| f - k as f64;
        // J+ |m⟩ = √(f(f+1) − m(m+1)) |m+1⟩, basis ordered m = f … −f
        let mut jp = zeros(d);
        for k in 1..d {
            jp[k - 1][k] = C::new((f * (f + 1.0) - m(k) * (m(k) + 1.0)).sqrt(), 0.0);
        }
        let jm: M = (0..d)
            .map(|i| (0..d).map(|j| jp[j][i].conj()).collect())
            .collect();
        let fx: M = (0..d)
            .map(|i| (0..d).map(|j| (jp[i][j] + jm[i][j]) * 0.5).collect())
            .collect();
        let fy: M = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (jp[i][j] - jm[i][j]) * C::new(0.0, -0.5))
                    .collect()
            })
            .collect();
        let mut fz = zeros(d);
        for (k, row) in fz.iter_mut().enumerate() {
            row[k] = C::new(m(k), 0.0);
        }
        let fy2 = matmul(&fy, &fy);
        // coherent state along +x: amplitudes √(C(2F, F−m) / 2^(2F))
        let total = 2f64.powi(twice_f as i32);
        let css_x = (0..d)
            .map(|k| C::new((binomial(twice_f as u64, k as u64) / total).sqrt(), 0.0))
            .collect();
        Self {
            f,
            fx,
            fy,
            fz,
            fy2,
            css_x,
        }
    }

    /// `(⟨fx⟩, Vyy, Vzz, Cyz)` after `exp(+iμ fy²)`.
    pub fn moments(&self, mu: f64) -> [f64; 4] {
        let gen: M = self
            .fy2
            .iter()
            .map(|r| r.iter().map(|x| x * C::new(0.0, mu)).collect())
            .collect();
        let psi = matvec(&expm(&gen), &self.css_x);
        let y = matvec(&self.fy, &psi);
        let z = matvec(&self.fz, &psi);
        let mx = dot(&psi, &matvec(&self.fx, &psi)).re;
        let my = dot(&psi, &y).re;
        let mz = dot(&psi, &z).re;
        [
            mx,
            dot(&y, &y).re - my * my,
            dot(&z, &z).re - mz * mz,
            dot(&y, &z).re - my * mz,
        ]
    }

    pub fn xi2(&self, m: &[f64; 4], cos: f64, sin: f64) -> f64 {
        let var = cos * cos * m[2] + sin * sin * m[1] + 2.0 * sin * cos * m[3];
        var * (self.f / m[0]).powi(2) / (self.f / 2.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Optimum {
    pub mu: f64,
    pub theta: f64,
    pub xi2: f64,
}

/// Scans `[mu_lo, mu_hi] × [0, π)` on a `MU_POINTS × THETA_POINTS` grid,
/// then rescans ±2 grid steps around the best point `ZOOM_LEVELS` times.
pub fn scan(twice_f: usize, mu_lo: f64, mu_hi: f64) -> Optimum {
    let spin = Spin::new(twice_f);
    let (mut mlo, mut mhi) = (mu_lo, mu_hi);
    let (mut tlo, mut thi) = (0.0, std::f64::consts::PI);
    let mut best = Optimum {
        mu: f64::NAN,
        theta: f64::NAN,
        xi2: f64::INFINITY,
    };
    for level in 0..=ZOOM_LEVELS {
        let mstep = (mhi - mlo) / (MU_POINTS - 1) as f64;
        let tstep = if level == 0 {
            (thi - tlo) / THETA_POINTS as f64
        } else {
            (thi - tlo) / (THETA_POINTS - 1) as f64
        };
        let trig: Vec<(f64, f64, f64)> = (0..THETA_POINTS)
            .map(|j| {
                let t = tlo + j as f64 * tstep;
                (t, t.cos(), t.sin())
            })
            .collect();
        for i in 0..MU_POINTS {
            let mu = mlo + i as f64 * mstep;
            let m = spin.moments(mu);
            for &(t, c, s) in &trig {
                let v = spin.xi2(&m, c, s);
                if v < best.xi2 {
                    best = Optimum {
                        mu,
                        theta: t,
                        xi2: v,
                    };
                }
            }
        }
        mlo = (best.mu - 2.0 * mstep).max(mu_lo);
        mhi = (best.mu + 2.0 * mstep).min(mu_hi);
        tlo = best.theta - 2.0 * tstep;
        thi = best.theta + 2.0 * tstep;
    }
    best
}
