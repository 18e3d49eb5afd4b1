//! Seeded sampling of window readouts from the moment chain.
//!
//! Cycle `c` of row `r` under master seed `s` draws from a ChaCha8 stream
//! seeded with [`child_seed`]`(s, r, c)`, so every cycle is reproducible in
//! isolation and results do not depend on the thread count.

use nalgebra::{Cholesky, DVector, Dyn, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::engine::{build_chain, reference_sequence, Chain};
use super::sequence::{EngineConfig, Mode, PulseSequence};
use super::ProtocolError;
use crate::gaussian::{
    conditional_variance_three_pulse, conditional_variance_two_pulse, SqueezingReport,
};
use crate::to_db;

pub const MIN_CYCLES: usize = 100;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(seed) ^ row) ^ cycle)`.
pub fn child_seed(seed: u64, row: u64, cycle: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ row) ^ cycle)
}

/// Sample means and covariance (with `n − 1` normalization).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub means: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl SampleSummary {
    fn of(outcomes: &[Vec<f64>], k: usize) -> Self {
        let n = outcomes.len() as f64;
        let mut means = vec![0.0; k];
        for row in outcomes {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut cov = vec![vec![0.0; k]; k];
        for row in outcomes {
            for i in 0..k {
                let di = row[i] - means[i];
                for j in i..k {
                    cov[i][j] += di * (row[j] - means[j]);
                }
            }
        }
        for i in 0..k {
            for j in i..k {
                cov[i][j] /= n - 1.0;
                cov[j][i] = cov[i][j];
            }
        }
        Self { means, cov }
    }

    /// `V_i`, 1-based.
    pub fn v(&self, i: usize) -> f64 {
        self.cov[i - 1][i - 1]
    }

    /// `C_ij`, 1-based.
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.cov[i - 1][j - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    /// One `(m_1, …, m_k)` per cycle.
    pub outcomes: Vec<Vec<f64>>,
    pub summary: SampleSummary,
    pub n_cycles: usize,
}

/// Draws `n_cycles` readout vectors for one chain.
pub fn sample_chain(
    chain: &Chain,
    n_cycles: usize,
    seed: u64,
    row: u64,
) -> Result<MeasurementRecord, ProtocolError> {
    if n_cycles < MIN_CYCLES {
        return Err(ProtocolError::TooFewCycles {
            min: MIN_CYCLES,
            got: n_cycles,
        });
    }
    let k = chain.n_windows;
    let chol = Cholesky::<f64, Dyn>::new(chain.outcome_matrix())
        .ok_or(ProtocolError::NotPositiveDefinite)?;
    let l = chol.l();
    let mean = DVector::from_column_slice(&chain.outcome_mean);
    let outcomes: Vec<Vec<f64>> = (0..n_cycles as u64)
        .into_par_iter()
        .map(|cycle| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, row, cycle));
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            (&mean + &l * z).iter().copied().collect()
        })
        .collect();
    let summary = SampleSummary::of(&outcomes, k);
    Ok(MeasurementRecord {
        outcomes,
        summary,
        n_cycles,
    })
}

/// Empirical squeezing of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub xi2_nl: f64,
    pub xi2_cond: f64,
    /// Standard error of `xi2_cond` from `√(2/(n − k))` on the conditional
    /// outcome variance.
    pub xi2_cond_stderr: f64,
}

/// Recovers `ξ²` from sample statistics, using the known gains and shot
/// noise of the chain.
pub fn estimate(chain: &Chain, record: &MeasurementRecord) -> Result<Estimate, ProtocolError> {
    if chain.n_windows < 2 {
        return Err(ProtocolError::WindowCount {
            mode: chain.mode,
            needed: 2,
            available: chain.n_windows,
        });
    }
    let s = &record.summary;
    let g2 = chain.gains[1];
    if !(g2 > 0.0) {
        return Err(ProtocolError::UnresolvableTarget);
    }
    let stage = |source| ProtocolError::Gaussian {
        stage: "monte carlo".into(),
        source,
    };
    let (cond_m, k) = match chain.mode {
        Mode::TwoPulse => (
            conditional_variance_two_pulse(s.v(1), s.v(2), s.c(1, 2)).map_err(stage)?,
            1usize,
        ),
        Mode::ThreePulse => {
            let m = Matrix3::from_fn(|i, j| s.cov[i][j]);
            (
                conditional_variance_three_pulse(&m)
                    .map_err(stage)?
                    .variance,
                2usize,
            )
        }
    };
    let var = (cond_m - chain.shot_vars[1]) / (g2 * g2);
    let rel = (2.0 / (record.n_cycles as f64 - k as f64)).sqrt();
    let g1 = chain.gains[0];
    let xi2_nl = if g1 > 0.0 {
        chain.xi2_of((s.v(1) - chain.shot_vars[0]) / (g1 * g1))
    } else {
        chain.xi2_nl
    };
    Ok(Estimate {
        xi2_nl,
        xi2_cond: chain.xi2_of(var),
        xi2_cond_stderr: chain.xi2_of(rel * cond_m / (g2 * g2)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloRun {
    pub record: MeasurementRecord,
    pub report: SqueezingReport,
    pub xi2_tot_stderr: f64,
    pub xi2_qnd_stderr: f64,
}

/// Samples the sequence (row 0) and its `μ = 0` reference (row 1).
pub fn run_monte_carlo(
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
    n_cycles: usize,
    seed: u64,
) -> Result<MonteCarloRun, ProtocolError> {
    let chain = build_chain(seq, engine, mode)?;
    let reference = build_chain(&reference_sequence(seq), engine, mode)?;
    let record = sample_chain(&chain, n_cycles, seed, 0)?;
    let ref_record = sample_chain(&reference, n_cycles, seed, 1)?;
    let main = estimate(&chain, &record)?;
    let qnd = estimate(&reference, &ref_record)?;
    Ok(MonteCarloRun {
        record,
        report: SqueezingReport::new(
            main.xi2_nl,
            qnd.xi2_cond,
            main.xi2_cond,
            chain.decay_penalty,
            to_db(chain.shortening),
        ),
        xi2_tot_stderr: main.xi2_cond_stderr,
        xi2_qnd_stderr: qnd.xi2_cond_stderr,
    })
}
