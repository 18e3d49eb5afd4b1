//! Deterministic derivative-free minimization.
//!
//! A full tensor grid is evaluated in parallel, then each coordinate of the
//! best point is refined by golden-section search inside one grid step on
//! either side. A refinement is kept only if it strictly improves the best
//! value, so ties stay at the earliest grid point. For a parameter the
//! objective ignores, that is its lower bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::golden_section;
use crate::protocol::{
    build_chain, run_analytic, run_analytic_with, EngineConfig, Mode, Parameter, PreparedTwist,
    PulseSequence,
};
use crate::to_db;

pub const DEFAULT_GRID_RESOLUTION: usize = 21;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const MAX_PASSES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("invalid optimization problem: {0}")]
    InvalidProblem(String),
    #[error("objective failed at every grid point ({failures} failures); first: {first}")]
    AllFailed { failures: usize, first: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBound {
    pub parameter: Parameter,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationProblem {
    pub parameters: Vec<ParameterBound>,
    /// Grid points per parameter before the budget cap.
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    /// Maximum objective evaluations.
    pub budget: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_resolution() -> usize {
    DEFAULT_GRID_RESOLUTION
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl OptimizationProblem {
    pub fn new(parameters: Vec<ParameterBound>, budget: usize) -> Self {
        Self {
            parameters,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
            budget,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.parameters.is_empty() {
            errors.push("at least one parameter is required".to_string());
        }
        for (i, b) in self.parameters.iter().enumerate() {
            if !(b.lower.is_finite() && b.upper.is_finite()) {
                errors.push(format!(
                    "parameters[{i}] ({}): bounds must be finite",
                    b.parameter
                ));
            } else if !(b.lower < b.upper) {
                errors.push(format!(
                    "parameters[{i}] ({}): lower {} must be below upper {}",
                    b.parameter, b.lower, b.upper
                ));
            }
            if self.parameters[..i]
                .iter()
                .any(|o| o.parameter == b.parameter)
            {
                errors.push(format!("parameters[{i}] ({}): listed twice", b.parameter));
            }
        }
        if self.budget < 1 {
            errors.push("budget must be at least 1".to_string());
        }
        if self.grid_resolution < 1 {
            errors.push("grid_resolution must be at least 1".to_string());
        }
        if !(self.tolerance > 0.0) {
            errors.push("tolerance must be positive".to_string());
        }
        errors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Grid,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub phase: Phase,
    pub params: Vec<f64>,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub best_grid_value: f64,
    pub trace: Vec<TraceEntry>,
}

/// Grid points per axis so that the full grid fits the budget.
fn grid_resolution(requested: usize, dims: usize, budget: usize) -> usize {
    let mut res = requested.max(1);
    while res > 1 && res.checked_pow(dims as u32).is_none_or(|n| n > budget) {
        res -= 1;
    }
    res
}

fn axis(lower: f64, upper: f64, res: usize) -> Vec<f64> {
    if res == 1 {
        return vec![lower];
    }
    (0..res)
        .map(|i| lower + (upper - lower) * i as f64 / (res - 1) as f64)
        .collect()
}

/// Minimizes `f` over the box `bounds`.
pub fn minimize<F>(
    bounds: &[(f64, f64)],
    resolution: usize,
    budget: usize,
    tolerance: f64,
    f: F,
) -> Result<Minimum, OptimizeError>
where
    F: Fn(&[f64]) -> Result<f64, String> + Sync,
{
    if bounds.is_empty() || budget < 1 {
        return Err(OptimizeError::InvalidProblem(
            "need at least one parameter and a budget ≥ 1".into(),
        ));
    }
    let dims = bounds.len();
    let res = grid_resolution(resolution, dims, budget);
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| axis(lo, hi, res)).collect();
    let n_grid = res.pow(dims as u32);
    let points: Vec<Vec<f64>> = (0..n_grid)
        .map(|mut idx| {
            let mut p = vec![0.0; dims];
            for d in (0..dims).rev() {
                p[d] = axes[d][idx % res];
                idx /= res;
            }
            p
        })
        .collect();
    let values: Vec<Result<f64, String>> = points
        .par_iter()
        .map(|p| {
            f(p).and_then(|v| {
                if v.is_nan() {
                    Err("objective returned NaN".to_string())
                } else {
                    Ok(v)
                }
            })
        })
        .collect();

    let mut trace: Vec<TraceEntry> = Vec::with_capacity(budget.min(n_grid + 64 * dims));
    let mut best: Option<(usize, f64)> = None;
    for (i, (p, v)) in points.iter().zip(&values).enumerate() {
        match v {
            Ok(v) => {
                if best.is_none_or(|(_, b)| *v < b) {
                    best = Some((i, *v));
                }
                trace.push(TraceEntry {
                    phase: Phase::Grid,
                    params: p.clone(),
                    value: Some(*v),
                    error: None,
                });
            }
            Err(e) => trace.push(TraceEntry {
                phase: Phase::Grid,
                params: p.clone(),
                value: None,
                error: Some(e.clone()),
            }),
        }
    }
    let Some((best_idx, best_grid_value)) = best else {
        let first = values
            .iter()
            .find_map(|v| v.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(OptimizeError::AllFailed {
            failures: n_grid,
            first,
        });
    };

    let mut x = points[best_idx].clone();
    let mut value = best_grid_value;
    let mut used = n_grid;
    let steps: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| {
            if res > 1 {
                (hi - lo) / (res - 1) as f64
            } else {
                hi - lo
            }
        })
        .collect();
    'passes: for _ in 0..MAX_PASSES {
        let mut improved = false;
        for d in 0..dims {
            if used >= budget {
                break 'passes;
            }
            let (lo, hi) = bounds[d];
            let a = (x[d] - steps[d]).max(lo);
            let b = (x[d] + steps[d]).min(hi);
            if !(b - a > tolerance) {
                continue;
            }
            let mut probe = x.clone();
            let (xd, vd) = golden_section(
                |t| {
                    if used >= budget {
                        return f64::INFINITY;
                    }
                    used += 1;
                    probe[d] = t;
                    match f(&probe) {
                        Ok(v) if !v.is_nan() => {
                            trace.push(TraceEntry {
                                phase: Phase::Refine,
                                params: probe.clone(),
                                value: Some(v),
                                error: None,
                            });
                            v
                        }
                        Ok(_) => {
                            trace.push(TraceEntry {
                                phase: Phase::Refine,
                                params: probe.clone(),
                                value: None,
                                error: Some("objective returned NaN".into()),
                            });
                            f64::INFINITY
                        }
                        Err(e) => {
                            trace.push(TraceEntry {
                                phase: Phase::Refine,
                                params: probe.clone(),
                                value: None,
                                error: Some(e),
                            });
                            f64::INFINITY
                        }
                    }
                },
                a,
                b,
                tolerance,
            );
            if vd < value {
                x[d] = xd;
                value = vd;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(Minimum {
        x,
        value,
        best_grid_value,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub best_params: Vec<(Parameter, f64)>,
    pub best_value_db: f64,
    pub best_grid_value_db: f64,
    pub trace: Vec<TraceEntry>,
}

/// Minimizes `ξ²_tot` in dB over the problem's parameters.
pub fn optimize(
    problem: &OptimizationProblem,
    seq: &PulseSequence,
    engine: &EngineConfig,
    mode: Mode,
) -> Result<OptimizationResult, OptimizeError> {
    let violations = problem.violations();
    if !violations.is_empty() {
        return Err(OptimizeError::InvalidProblem(violations.join("; ")));
    }
    let bounds: Vec<(f64, f64)> = problem
        .parameters
        .iter()
        .map(|b| (b.lower, b.upper))
        .collect();
    let prepared = if problem
        .parameters
        .iter()
        .all(|b| b.parameter.preserves_twist())
    {
        PreparedTwist::new(seq, engine).ok()
    } else {
        None
    };
    let objective = |x: &[f64]| {
        let mut s = seq.clone();
        for (b, &v) in problem.parameters.iter().zip(x) {
            b.parameter.set(&mut s, v);
        }
        match &prepared {
            Some(p) => run_analytic_with(&s, engine, mode, p),
            None => run_analytic(&s, engine, mode),
        }
        .map(|r| r.xi2_tot_db)
        .map_err(|e| e.to_string())
    };
    let m = minimize(
        &bounds,
        problem.grid_resolution,
        problem.budget,
        problem.tolerance,
        objective,
    )?;
    Ok(OptimizationResult {
        best_params: problem
            .parameters
            .iter()
            .map(|b| b.parameter)
            .zip(m.x)
            .collect(),
        best_value_db: m.value,
        best_grid_value_db: m.best_grid_value,
        trace: m.trace,
    })
}

const OAT_GRID: usize = 257;
const OAT_TOLERANCE: f64 = 1e-10;

/// `(μ*, ξ²_NL in dB)` minimizing the internal squeezing of `seq` over
/// `mu_range ⊂ [0, π]`.
pub fn find_optimal_oat(
    mu_range: (f64, f64),
    seq: &PulseSequence,
    engine: &EngineConfig,
) -> Result<(f64, f64), OptimizeError> {
    let (lo, hi) = mu_range;
    let pi = std::f64::consts::PI;
    if !(lo >= 0.0 && hi <= pi && lo <= hi) {
        return Err(OptimizeError::InvalidProblem(format!(
            "μ range [{lo}, {hi}] must lie within [0, π]"
        )));
    }
    let objective = |mu: f64| {
        let mut s = seq.clone();
        s.w1.mu = mu;
        build_chain(&s, engine, Mode::TwoPulse)
            .map(|c| to_db(c.xi2_nl))
            .map_err(|e| e.to_string())
    };
    if hi - lo <= OAT_TOLERANCE {
        let v = objective(lo).map_err(|first| OptimizeError::AllFailed { failures: 1, first })?;
        return Ok((lo, v));
    }
    let m = minimize(&[(lo, hi)], OAT_GRID, usize::MAX, OAT_TOLERANCE, |x| {
        objective(x[0])
    })?;
    Ok((m.x[0], m.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{DecaySpec, PumpStage};

    #[test]
    fn quadratic_minimum() {
        let m = minimize(&[(-1.0, 1.0), (0.0, 2.0)], 11, 10_000, 1e-9, |x| {
            Ok((x[0] - 0.123).powi(2) + 2.0 * (x[1] - 1.456).powi(2))
        })
        .unwrap();
        assert!((m.x[0] - 0.123).abs() < 1e-6);
        assert!((m.x[1] - 1.456).abs() < 1e-6);
        assert!(m.value <= m.best_grid_value);
    }

    #[test]
    fn ignored_parameter_stays_at_lower_bound() {
        let m = minimize(&[(0.0, 1.0), (-3.0, 5.0)], 9, 1000, 1e-8, |x| {
            Ok((x[0] - 0.4).powi(2))
        })
        .unwrap();
        assert_eq!(m.x[1], -3.0);
    }

    #[test]
    fn failed_points_are_logged_and_skipped() {
        let m = minimize(&[(0.0, 1.0)], 11, 1000, 1e-8, |x| {
            if x[0] < 0.5 {
                Err("left half fails".into())
            } else {
                Ok(x[0])
            }
        })
        .unwrap();
        assert_eq!(m.x[0], 0.5);
        assert!(m.trace.iter().any(|t| t.error.is_some()));
    }

    #[test]
    fn all_failed_is_an_error() {
        let r = minimize(&[(0.0, 1.0)], 5, 100, 1e-8, |_| {
            Err::<f64, _>("nope".into())
        });
        assert!(matches!(
            r,
            Err(OptimizeError::AllFailed { failures: 5, .. })
        ));
    }

    #[test]
    fn budget_caps_evaluations() {
        let m = minimize(
            &[(0.0, 1.0), (0.0, 1.0)],
            50,
            30,
            1e-12,
            |x| Ok(x[0] + x[1]),
        )
        .unwrap();
        assert!(m.trace.len() <= 30);
    }

    #[test]
    fn problem_validation() {
        let p = OptimizationProblem::new(
            vec![ParameterBound {
                parameter: Parameter::Mu,
                lower: 1.0,
                upper: 0.5,
            }],
            0,
        );
        assert_eq!(p.violations().len(), 2);
    }

    fn ideal() -> PulseSequence {
        let mut seq = PulseSequence::default();
        seq.pump = PumpStage {
            polarization: 1.0,
            residual_ratio: 0.0,
        };
        seq.w1.degradation = Some(0.0);
        seq.decay = DecaySpec { t1: None };
        seq
    }

    #[test]
    fn ideal_oat_optimum() {
        let (mu, db) = find_optimal_oat((0.0, 1.0), &ideal(), &EngineConfig::default()).unwrap();
        assert!((mu - 0.34338).abs() < 1e-4, "{mu}");
        assert!((db - to_db(0.51156)).abs() < 1e-3, "{db}");
    }

    #[test]
    fn decoherence_lowers_optimal_mu() {
        let mut e = EngineConfig::default();
        let (mu0, db0) = find_optimal_oat((0.0, 1.0), &ideal(), &e).unwrap();
        e.flags.oat_decoherence = 2.0;
        let (mu1, db1) = find_optimal_oat((0.0, 1.0), &ideal(), &e).unwrap();
        assert!(mu1 < mu0);
        assert!(db1 > db0);
    }

    #[test]
    fn collapsed_range_returns_point() {
        let (mu, _) = find_optimal_oat((0.2, 0.2), &ideal(), &EngineConfig::default()).unwrap();
        assert_eq!(mu, 0.2);
        assert!(find_optimal_oat((0.0, 4.0), &ideal(), &EngineConfig::default()).is_err());
    }
}
