//! The subcommands. Each turns a validated [`RunConfig`] into the files of
//! an [`OutputSet`] plus a short human-readable summary.

use std::collections::BTreeMap;

use coopsqueeze::oracle::MAX_ATOMS;
use coopsqueeze::{
    gaussian_equivalence, make_up_down, oat_evolve, optimal_internal_quadrature, optimize,
    pair_excitation_check, product_state, rotation_angle_deg, rotation_angle_scan, run_analytic,
    run_monte_carlo, sweep, variance_formula_check, apply_outcome_zero_kraus, InternalStatePair,
    OatParams, RotationDenominator, SpinOperators, SqueezingBracket, SqueezingReport,
    WeakMeasurementParams,
};
use serde::Serialize;

use crate::config::{Comparison, RunConfig};
use crate::output::{num, OutputSet, Table};

/// A failure after the configuration was accepted.
pub struct RuntimeFailure {
    pub message: String,
    /// Files worth keeping despite the failure (e.g. a sweep whose every
    /// row failed, or a failed oracle check).
    pub partial: Option<Outcome>,
}

impl RuntimeFailure {
    fn new(message: impl Into<String>) -> Self {
        Self { message: message.into(), partial: None }
    }
}

pub struct Outcome {
    pub files: OutputSet,
    pub lines: Vec<String>,
}

fn fail<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> RuntimeFailure + '_ {
    move |e| RuntimeFailure::new(format!("{context}: {e}"))
}

fn finish(mut files: OutputSet, config: &RunConfig, summary: &impl Serialize) -> OutputSet {
    files.json("summary.json", summary);
    files.text("config.toml", &config.to_toml());
    files
}

const REPORT_HEADER: [&str; 11] = [
    "source",
    "xi2_nl",
    "xi2_qnd",
    "xi2_tot",
    "xi2_nl_db",
    "xi2_qnd_db",
    "xi2_tot_db",
    "decay_penalty",
    "mean_spin_loss_db",
    "xi2_tot_stderr",
    "xi2_qnd_stderr",
];

fn report_row(source: &str, r: &SqueezingReport, stderr: Option<(f64, f64)>) -> Vec<String> {
    let mut row = vec![
        source.to_string(),
        num(r.xi2_nl),
        num(r.xi2_qnd),
        num(r.xi2_tot),
        num(r.xi2_nl_db),
        num(r.xi2_qnd_db),
        num(r.xi2_tot_db),
        num(r.decay_penalty),
        num(r.mean_spin_loss_db),
    ];
    match stderr {
        Some((tot, qnd)) => row.extend([num(tot), num(qnd)]),
        None => row.extend([String::new(), String::new()]),
    }
    row
}

#[derive(Serialize)]
struct McSummary {
    n_cycles: usize,
    seed: u64,
    report: SqueezingReport,
    xi2_tot_stderr: f64,
    xi2_qnd_stderr: f64,
    /// `(MC − analytic)/stderr` for `ξ²_tot`.
    xi2_tot_z: f64,
}

#[derive(Serialize)]
struct ComparisonSummary {
    #[serde(flatten)]
    measured: Comparison,
    overlaps_bracket: bool,
}

#[derive(Serialize)]
struct SimulateSummary {
    mode: coopsqueeze::Mode,
    analytic: SqueezingReport,
    effective_kappa2: f64,
    /// Combination formula and plain product at the analytic `ξ²_NL` and
    /// effective `κ̃²`.
    bracket: SqueezingBracket,
    rotation_angle_deg: f64,
    monte_carlo: Option<McSummary>,
    compare: Option<ComparisonSummary>,
}

pub fn simulate(config: &RunConfig) -> Result<Outcome, RuntimeFailure> {
    let (seq, engine, mode) = (&config.sequence, &config.engine, config.run.mode);
    let analytic = run_analytic(seq, engine, mode).map_err(fail("analytic chain"))?;
    let mut table = Table::new("simulate.csv", &REPORT_HEADER);
    table.row(report_row("analytic", &analytic, None));
    let mut files = OutputSet::new(&config.output.dir);
    let mut lines = vec![format!(
        "analytic: xi2_nl = {:.3} dB, xi2_qnd = {:.3} dB, xi2_tot = {:.3} dB",
        analytic.xi2_nl_db, analytic.xi2_qnd_db, analytic.xi2_tot_db
    )];

    let monte_carlo = if config.run.n_cycles > 0 {
        let run = run_monte_carlo(seq, engine, mode, config.run.n_cycles, config.run.seed)
            .map_err(fail("Monte Carlo"))?;
        table.row(report_row("monte_carlo", &run.report, Some((run.xi2_tot_stderr, run.xi2_qnd_stderr))));
        let z = (run.report.xi2_tot - analytic.xi2_tot) / run.xi2_tot_stderr;
        lines.push(format!(
            "monte carlo ({} cycles, seed {}): xi2_tot = {:.3} dB, z = {z:.2}",
            config.run.n_cycles, config.run.seed, run.report.xi2_tot_db
        ));
        if config.output.write_outcomes {
            let k = run.record.outcomes.first().map_or(0, Vec::len);
            let header: Vec<String> =
                std::iter::once("cycle".to_string()).chain((1..=k).map(|i| format!("m{i}"))).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut outcomes = Table::new("outcomes.csv", &header);
            for (cycle, row) in run.record.outcomes.iter().enumerate() {
                outcomes.row(std::iter::once(cycle.to_string()).chain(row.iter().map(|&m| num(m))));
            }
            files.table(outcomes);
        }
        Some(McSummary {
            n_cycles: config.run.n_cycles,
            seed: config.run.seed,
            report: run.report,
            xi2_tot_stderr: run.xi2_tot_stderr,
            xi2_qnd_stderr: run.xi2_qnd_stderr,
            xi2_tot_z: z,
        })
    } else {
        None
    };

    let effective_kappa2 = analytic.effective_kappa2();
    let bracket = SqueezingBracket::new(analytic.xi2_nl, effective_kappa2);
    lines.push(format!("bracket: [{:.3}, {:.3}] dB", bracket.lower_db(), bracket.upper_db()));
    let compare = config.compare.map(|measured| {
        let overlaps_bracket = bracket.overlaps(measured.measured_db, measured.error_db);
        lines.push(format!(
            "measured {:.2} ± {:.2} dB {} the bracket",
            measured.measured_db,
            measured.error_db,
            if overlaps_bracket { "overlaps" } else { "misses" }
        ));
        ComparisonSummary { measured, overlaps_bracket }
    });
    let summary = SimulateSummary {
        mode,
        analytic,
        effective_kappa2,
        bracket,
        rotation_angle_deg: rotation_angle_deg(engine.spin, seq.w1.mu, engine.flags.rotation_denominator),
        monte_carlo,
        compare,
    };
    files.table(table);
    Ok(Outcome { files: finish(files, config, &summary), lines })
}

#[derive(Serialize)]
struct SweepSummary {
    axis: String,
    points: usize,
    failed: usize,
    mode: coopsqueeze::Mode,
    best_value: Option<f64>,
    best_xi2_tot_db: Option<f64>,
}

/// Header of `sweep.csv`; the first column is named after the axis.
pub fn sweep_header(axis: &str) -> [String; 5] {
    [
        axis.to_string(),
        "xi2_nl_db".into(),
        "xi2_tot_db".into(),
        "rotation_angle_deg".into(),
        "error".into(),
    ]
}

pub fn sweep_command(config: &RunConfig) -> Result<Outcome, RuntimeFailure> {
    let axis = config.sweep.axis;
    let values = config.sweep.values();
    let rows = sweep(&config.sequence, &config.engine, axis, &values, config.run.mode).map_err(fail("sweep"))?;
    let header = sweep_header(axis.name());
    let mut table = Table::new("sweep.csv", &header.each_ref().map(String::as_str));
    let mut failed = 0;
    let mut best: Option<(f64, f64)> = None;
    for row in &rows {
        match &row.result {
            Ok(p) => {
                table.row([num(row.value), num(p.xi2_nl_db), num(p.xi2_tot_db), num(p.rotation_angle_deg), String::new()]);
                if best.is_none_or(|(_, b)| p.xi2_tot_db < b) {
                    best = Some((row.value, p.xi2_tot_db));
                }
            }
            Err(e) => {
                failed += 1;
                table.row([num(row.value), String::new(), String::new(), String::new(), e.clone()]);
            }
        }
    }
    let summary = SweepSummary {
        axis: axis.name().into(),
        points: rows.len(),
        failed,
        mode: config.run.mode,
        best_value: best.map(|b| b.0),
        best_xi2_tot_db: best.map(|b| b.1),
    };
    let mut lines = vec![format!("sweep over {}: {} points, {failed} failed", axis, rows.len())];
    if let Some((v, db)) = best {
        lines.push(format!("best xi2_tot = {db:.4} dB at {axis} = {v}"));
    }
    let mut files = OutputSet::new(&config.output.dir);
    files.table(table);
    let outcome = Outcome { files: finish(files, config, &summary), lines };
    if failed == rows.len() {
        return Err(RuntimeFailure { message: "every sweep point failed".into(), partial: Some(outcome) });
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct OptimizeSummary {
    mode: coopsqueeze::Mode,
    best_params: BTreeMap<String, f64>,
    best_value_db: f64,
    best_grid_value_db: f64,
    evaluations: usize,
}

pub fn optimize_command(config: &RunConfig) -> Result<Outcome, RuntimeFailure> {
    let problem = config.optimize.problem();
    let r = optimize(&problem, &config.sequence, &config.engine, config.run.mode).map_err(fail("optimizer"))?;
    let names: Vec<&str> = problem.parameters.iter().map(|b| b.parameter.name()).collect();
    let header: Vec<&str> =
        ["evaluation", "phase"].into_iter().chain(names.iter().copied()).chain(["xi2_tot_db", "error"]).collect();
    let mut table = Table::new("optimize.csv", &header);
    for (i, t) in r.trace.iter().enumerate() {
        let phase = match t.phase {
            coopsqueeze::optimize::Phase::Grid => "grid",
            coopsqueeze::optimize::Phase::Refine => "refine",
        };
        let row: Vec<String> = [i.to_string(), phase.to_string()]
            .into_iter()
            .chain(t.params.iter().map(|&x| num(x)))
            .chain([t.value.map(num).unwrap_or_default(), t.error.clone().unwrap_or_default()])
            .collect();
        table.row(row);
    }
    let best_params: BTreeMap<String, f64> = r.best_params.iter().map(|(p, x)| (p.name().to_string(), *x)).collect();
    let params_text: Vec<String> = r.best_params.iter().map(|(p, x)| format!("{p} = {x:.6}")).collect();
    let lines = vec![
        format!("best xi2_tot = {:.4} dB at {}", r.best_value_db, params_text.join(", ")),
        format!("grid best {:.4} dB, {} evaluations", r.best_grid_value_db, r.trace.len()),
    ];
    let summary = OptimizeSummary {
        mode: config.run.mode,
        best_params,
        best_value_db: r.best_value_db,
        best_grid_value_db: r.best_grid_value_db,
        evaluations: r.trace.len(),
    };
    let mut files = OutputSet::new(&config.output.dir);
    files.table(table);
    Ok(Outcome { files: finish(files, config, &summary), lines })
}

#[derive(Serialize)]
struct RotationSummary {
    points: usize,
    max_oat_modified_deg: f64,
    max_denominator_difference_deg: f64,
}

pub fn rotation_scan_command(config: &RunConfig) -> Result<Outcome, RuntimeFailure> {
    let spin = config.engine.spin;
    let mus = config.rotation_scan.values();
    let oat = rotation_angle_scan(spin, &mus, RotationDenominator::OatModified);
    let bare = rotation_angle_scan(spin, &mus, RotationDenominator::Bare);
    let mut table = Table::new("rotation_scan.csv", &["mu", "oat_modified_deg", "bare_deg"]);
    let mut max_angle = f64::NEG_INFINITY;
    let mut max_diff: f64 = 0.0;
    for (&(mu, a), &(_, b)) in oat.iter().zip(&bare) {
        table.row([num(mu), num(a), num(b)]);
        max_angle = max_angle.max(a);
        max_diff = max_diff.max((a - b).abs());
    }
    let summary = RotationSummary {
        points: mus.len(),
        max_oat_modified_deg: max_angle,
        max_denominator_difference_deg: max_diff,
    };
    let lines = vec![format!(
        "rotation scan: {} points, max angle {max_angle:.4}°, denominators differ by at most {max_diff:.2e}°",
        mus.len()
    )];
    let mut files = OutputSet::new(&config.output.dir);
    files.table(table);
    Ok(Outcome { files: finish(files, config, &summary), lines })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub kappa2: f64,
    /// Non-negative deviation; the check passes when `value < bound`.
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

fn check(name: &str, kappa2: f64, value: f64, bound: f64) -> CheckRow {
    CheckRow { check: name.into(), kappa2, value, bound, passed: value < bound }
}

/// Bound on `|ratio − 16|` for the overlap error at `κ̃²` versus `κ̃²/4`,
/// i.e. for halving `κ̃` when the error is fourth order in it.
const SCALING_TOLERANCE: f64 = 1.5;

fn oracle_rows(config: &RunConfig) -> Result<Vec<CheckRow>, String> {
    let o = &config.oracle;
    let n = o.n_atoms;
    let ops = SpinOperators::new(config.engine.spin);
    let e = |x: coopsqueeze::OracleError| x.to_string();
    let q = |x: coopsqueeze::QuditError| x.to_string();
    let css_pair = make_up_down(&ops, &ops.css(), 0.0).map_err(q)?;
    let twisted = oat_evolve(&ops, &ops.css(), &OatParams::ideal(o.mu));
    let (theta, _) = optimal_internal_quadrature(&ops, &twisted);
    let squeezed: InternalStatePair = make_up_down(&ops, &twisted, theta).map_err(q)?;

    let mut rows = Vec::new();
    for &k in &o.kappa2 {
        let g = gaussian_equivalence(&ops, n, &squeezed, k).map_err(e)?;
        rows.push(check("gaussian_equivalence", k, g.relative_error(), 0.02));
    }
    for &k in &o.kappa2 {
        let full = pair_excitation_check(n, &css_pair, k).map_err(e)?;
        let half = pair_excitation_check(n, &css_pair, k / 4.0).map_err(e)?;
        let ratio = full.overlap_error / half.overlap_error;
        rows.push(check("pair_overlap_scaling", k, (ratio - 16.0).abs(), SCALING_TOLERANCE));
    }
    let k0 = o.kappa2[0];
    let amp = pair_excitation_check(n, &css_pair, k0).map_err(e)?;
    rows.push(check("pair_amplitude_ratio", k0, (amp.amplitude_ratio - 1.0).abs(), 0.05));

    let kv = o.variance_kappa2;
    let sq = variance_formula_check(n, &squeezed, kv).map_err(e)?;
    rows.push(check("variance_formula", kv, sq.relative_discrepancy(), 1e-3));
    let initial = |p: &InternalStatePair| n as f64 * p.delta_fz.powi(2);
    let css = variance_formula_check(n, &css_pair, kv).map_err(e)?;
    let ratio = (initial(&squeezed) - sq.exact_var) / (initial(&css_pair) - css.exact_var);
    rows.push(check("squeezed_reduction_below_css", kv, ratio, 1.0));

    let k_last = *o.kappa2.last().expect("validated non-empty");
    let start = product_state(n, &squeezed.up).map_err(e)?;
    let pnl = n as f64 * ops.spin().css_variance();
    let params = WeakMeasurementParams::from_kappa2(k_last, pnl).map_err(e)?;
    let post = apply_outcome_zero_kraus(&start, &params).map_err(e)?;
    let asymmetry = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .map(|(a, b)| (post.swap_sites(a, b).amplitudes() - post.amplitudes()).norm())
        .fold(0.0, f64::max);
    rows.push(check("permutation_symmetry", k_last, asymmetry, 1e-10));
    let odd: f64 = (1..=n).step_by(2).map(|c| post.odd_site_weight(&ops, c)).sum();
    rows.push(check("odd_site_parity", k_last, odd, 1e-20));
    Ok(rows)
}

#[derive(Serialize)]
struct OracleSummary {
    n_atoms: usize,
    spin: f64,
    max_atoms: usize,
    passed: usize,
    failed: usize,
    checks: Vec<CheckRow>,
}

pub fn oracle_check(config: &RunConfig) -> Result<Outcome, RuntimeFailure> {
    let rows = oracle_rows(config).map_err(fail("oracle"))?;
    let mut table = Table::new("oracle.csv", &["check", "n_atoms", "kappa2", "value", "bound", "passed"]);
    let n = config.oracle.n_atoms;
    let mut lines = Vec::new();
    for r in &rows {
        table.row([r.check.clone(), n.to_string(), num(r.kappa2), num(r.value), num(r.bound), r.passed.to_string()]);
        lines.push(format!(
            "{} {} (kappa2 = {}): {:.3e} < {:e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.kappa2,
            r.value,
            r.bound
        ));
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    let summary = OracleSummary {
        n_atoms: n,
        spin: config.engine.spin.value(),
        max_atoms: MAX_ATOMS,
        passed: rows.len() - failed,
        failed,
        checks: rows,
    };
    lines.push(format!("{} of {} oracle checks passed", summary.passed, summary.checks.len()));
    let mut files = OutputSet::new(&config.output.dir);
    files.table(table);
    let outcome = Outcome { files: finish(files, config, &summary), lines };
    if failed > 0 {
        return Err(RuntimeFailure { message: format!("{failed} oracle checks failed"), partial: Some(outcome) });
    }
    Ok(outcome)
}
