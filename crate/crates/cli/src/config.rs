//! Run configuration and its TOML form.
//!
//! Every key is optional; omitted keys keep the defaults of
//! [`RunConfig::default`]. The layout mirrors [`PulseSequence`] (top-level
//! `window_gap`, sections `[pump]`, `[w1]`, `[gap]`, `[[windows]]`,
//! `[decay]`) plus `[run]`, `[engine]`, `[model]`, `[model.duty_cycle]`,
//! `[sweep]`, `[optimize]`, `[[optimize.parameters]]`, `[rotation_scan]`,
//! `[oracle]`, `[compare]` and `[output]`. See the README for the full key
//! list.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use coopsqueeze::oracle::MAX_ATOMS;
use coopsqueeze::protocol::{
    ProbeWindow, DEFAULT_T1, DEFAULT_WINDOW_DURATION, MIN_CYCLES,
};
use coopsqueeze::{
    EngineConfig, Mode, OptimizationProblem, Parameter, ParameterBound, ProtocolError,
    PulseSequence, Spin,
};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::Serialize;
use toml::{Table, Value};

/// One problem in a configuration file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Dotted key path, e.g. `windows[1].kappa2`.
    pub path: String,
    /// 1-based line of the key, or of its closest enclosing key.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSection {
    pub mode: Mode,
    /// Monte Carlo cycles for `simulate`; 0 runs the analytic chain only.
    pub n_cycles: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSection {
    pub axis: Parameter,
    /// Per-axis defaults from [`default_range`] when unset.
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSection {
    pub parameters: Vec<ParameterBound>,
    pub budget: usize,
    pub grid_resolution: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationScanSection {
    pub mu_start: f64,
    pub mu_stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSection {
    pub n_atoms: usize,
    /// Strengths for the Gaussian-equivalence check; the first one is also
    /// used for the pair-amplitude check.
    pub kappa2: Vec<f64>,
    pub variance_kappa2: f64,
    /// Twisting of the squeezed pair.
    pub mu: f64,
}

/// A measured value the combined-squeezing bracket is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub measured_db: f64,
    pub error_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write every Monte Carlo outcome.
    pub write_outcomes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sequence: PulseSequence,
    pub engine: EngineConfig,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub optimize: OptimizeSection,
    pub rotation_scan: RotationScanSection,
    pub oracle: OracleSection,
    pub compare: Option<Comparison>,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sequence: PulseSequence::default(),
            engine: EngineConfig::default(),
            run: RunSection { mode: Mode::TwoPulse, n_cycles: 100_000, seed: 0 },
            sweep: SweepSection { axis: Parameter::Theta, start: None, stop: None, points: 181 },
            optimize: OptimizeSection {
                parameters: vec![
                    ParameterBound { parameter: Parameter::Mu, lower: 0.0, upper: 1.0 },
                    ParameterBound { parameter: Parameter::Theta, lower: -0.5, upper: 0.5 },
                ],
                budget: 2_000,
                grid_resolution: coopsqueeze::optimize::DEFAULT_GRID_RESOLUTION,
                tolerance: coopsqueeze::optimize::DEFAULT_TOLERANCE,
            },
            rotation_scan: RotationScanSection { mu_start: 0.0, mu_stop: 0.6, points: 61 },
            oracle: OracleSection { n_atoms: 4, kappa2: vec![0.01, 0.05, 0.1], variance_kappa2: 0.02, mu: 0.2 },
            compare: None,
            output: OutputSection { dir: PathBuf::from("coopsqueeze-out"), write_outcomes: false },
        }
    }
}

/// `(start, stop)` used by `sweep` when the config leaves them unset.
pub fn default_range(axis: Parameter) -> (f64, f64) {
    match axis {
        Parameter::Theta => (0.0, std::f64::consts::PI),
        Parameter::Mu => (0.0, 1.0),
        Parameter::DutyCycle => (0.05, 1.0),
        Parameter::Kappa2 => (0.0, 5.0),
        Parameter::TauGap => (0.0, 4e-6),
    }
}

impl SweepSection {
    /// Evenly spaced values, endpoints included.
    pub fn values(&self) -> Vec<f64> {
        let (lo, hi) = default_range(self.axis);
        let (start, stop) = (self.start.unwrap_or(lo), self.stop.unwrap_or(hi));
        if self.points == 1 {
            return vec![start];
        }
        (0..self.points)
            .map(|k| start + (stop - start) * k as f64 / (self.points - 1) as f64)
            .collect()
    }
}

impl RotationScanSection {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.mu_start];
        }
        (0..self.points)
            .map(|k| self.mu_start + (self.mu_stop - self.mu_start) * k as f64 / (self.points - 1) as f64)
            .collect()
    }
}

impl OptimizeSection {
    pub fn problem(&self) -> OptimizationProblem {
        OptimizationProblem {
            parameters: self.parameters.clone(),
            grid_resolution: self.grid_resolution,
            budget: self.budget,
            tolerance: self.tolerance,
        }
    }
}

/// A parsed and validated configuration plus any downgraded diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub config: RunConfig,
    /// Unknown keys in lenient mode.
    pub warnings: Vec<Diagnostic>,
}

/// Parses and validates `text`, collecting every problem.
///
/// In strict mode unknown keys are errors; otherwise they are returned as
/// warnings. Type mismatches and bound violations are always errors.
pub fn parse_config(text: &str, strict: bool) -> Result<Parsed, Vec<Diagnostic>> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        vec![Diagnostic {
            path: "<document>".into(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        }]
    })?;
    let mut reader = Reader { lines: key_lines(text), errors: Vec::new(), warnings: Vec::new(), strict };
    let mut config = RunConfig::default();
    reader.read(&table, &mut config);
    if reader.errors.is_empty() {
        reader.validate(&config);
    }
    if reader.errors.is_empty() {
        Ok(Parsed { config, warnings: reader.warnings })
    } else {
        Err(reader.errors)
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn key_lines(text: &str) -> HashMap<String, usize> {
    use toml::de::{DeTable, DeValue};
    fn walk(text: &str, table: &DeTable<'_>, path: &str, out: &mut HashMap<String, usize>) {
        for (key, value) in table {
            let p = join(path, key.get_ref());
            out.entry(p.clone()).or_insert_with(|| line_of_offset(text, key.span().start));
            match value.get_ref() {
                DeValue::Table(t) => walk(text, t, &p, out),
                DeValue::Array(items) => {
                    for (i, item) in items.iter().enumerate() {
                        let ip = format!("{p}[{i}]");
                        out.insert(ip.clone(), line_of_offset(text, item.span().start));
                        if let DeValue::Table(t) = item.get_ref() {
                            walk(text, t, &ip, out);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let mut out = HashMap::new();
    if let Ok(doc) = DeTable::parse(text) {
        walk(text, doc.get_ref(), "", &mut out);
    }
    out
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

struct Reader {
    lines: HashMap<String, usize>,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
    strict: bool,
}

impl Reader {
    fn line(&self, path: &str) -> Option<usize> {
        let mut p = path;
        loop {
            if let Some(&l) = self.lines.get(p) {
                return Some(l);
            }
            let cut = p.rfind(['.', '[']).filter(|&i| i > 0)?;
            p = &p[..cut];
        }
    }

    fn error(&mut self, path: &str, message: impl Into<String>) {
        let line = self.line(path);
        self.errors.push(Diagnostic { path: path.to_string(), line, message: message.into() });
    }

    fn known(&mut self, table: &Table, path: &str, keys: &[&str]) {
        for key in table.keys() {
            if !keys.contains(&key.as_str()) {
                let p = join(path, key);
                let line = self.line(&p);
                let d = Diagnostic {
                    path: p,
                    line,
                    message: format!("unknown key (expected one of {})", keys.join(", ")),
                };
                if self.strict {
                    self.errors.push(d);
                } else {
                    self.warnings.push(d);
                }
            }
        }
    }

    fn table<'t>(&mut self, parent: &'t Table, path: &str, key: &str) -> Option<&'t Table> {
        match parent.get(key)? {
            Value::Table(t) => Some(t),
            other => {
                self.error(&join(path, key), format!("expected a table, found {}", type_name(other)));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, path: &str, key: &str, out: &mut f64) {
        if let Some(v) = self.float_opt(t, path, key) {
            *out = v;
        }
    }

    fn float_opt(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.error(&join(path, key), format!("expected a number, found {}", type_name(other)));
                None
            }
        }
    }

    fn count(&mut self, t: &Table, path: &str, key: &str, out: &mut u64) {
        let p = join(path, key);
        match t.get(key) {
            None => {}
            Some(Value::Integer(i)) if *i >= 0 => *out = *i as u64,
            Some(Value::Float(x)) if *x >= 0.0 && x.fract() == 0.0 && *x < 9.2e18 => *out = *x as u64,
            Some(Value::Integer(_) | Value::Float(_)) => self.error(&p, "expected a non-negative integer"),
            Some(other) => self.error(&p, format!("expected an integer, found {}", type_name(other))),
        }
    }

    fn size(&mut self, t: &Table, path: &str, key: &str, out: &mut usize) {
        let mut v = *out as u64;
        self.count(t, path, key, &mut v);
        *out = v as usize;
    }

    fn boolean(&mut self, t: &Table, path: &str, key: &str, out: &mut bool) {
        match t.get(key) {
            None => {}
            Some(Value::Boolean(b)) => *out = *b,
            Some(other) => self.error(&join(path, key), format!("expected a boolean, found {}", type_name(other))),
        }
    }

    fn choice<T: DeserializeOwned>(&mut self, t: &Table, path: &str, key: &str, out: &mut T) {
        match t.get(key) {
            None => {}
            Some(Value::String(s)) => {
                let parsed: Result<T, serde::de::value::Error> = T::deserialize(s.as_str().into_deserializer());
                match parsed {
                    Ok(v) => *out = v,
                    Err(e) => self.error(&join(path, key), e.to_string()),
                }
            }
            Some(other) => self.error(&join(path, key), format!("expected a string, found {}", type_name(other))),
        }
    }

    fn parameter(&mut self, t: &Table, path: &str, key: &str) -> Option<Parameter> {
        match t.get(key)? {
            Value::String(s) => match s.parse() {
                Ok(p) => Some(p),
                Err(e) => {
                    self.error(&join(path, key), e);
                    None
                }
            },
            other => {
                self.error(&join(path, key), format!("expected a string, found {}", type_name(other)));
                None
            }
        }
    }

    fn tables<'t>(&mut self, parent: &'t Table, path: &str, key: &str) -> Option<Vec<(String, &'t Table)>> {
        let p = join(path, key);
        match parent.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    let ip = format!("{p}[{i}]");
                    match item {
                        Value::Table(t) => out.push((ip, t)),
                        other => self.error(&ip, format!("expected a table, found {}", type_name(other))),
                    }
                }
                Some(out)
            }
            other => {
                self.error(&p, format!("expected an array of tables, found {}", type_name(other)));
                None
            }
        }
    }

    fn read(&mut self, root: &Table, c: &mut RunConfig) {
        self.known(
            root,
            "",
            &[
                "window_gap", "run", "engine", "pump", "w1", "gap", "windows", "decay", "model", "sweep",
                "optimize", "rotation_scan", "oracle", "compare", "output",
            ],
        );
        self.float(root, "", "window_gap", &mut c.sequence.window_gap);

        if let Some(t) = self.table(root, "", "run") {
            self.known(t, "run", &["mode", "n_cycles", "seed"]);
            self.choice(t, "run", "mode", &mut c.run.mode);
            self.size(t, "run", "n_cycles", &mut c.run.n_cycles);
            self.count(t, "run", "seed", &mut c.run.seed);
        }
        if let Some(t) = self.table(root, "", "engine") {
            self.known(t, "engine", &["spin", "n_atoms"]);
            if let Some(f) = self.float_opt(t, "engine", "spin") {
                match Spin::new(f) {
                    Ok(s) => c.engine.spin = s,
                    Err(e) => self.error("engine.spin", e.to_string()),
                }
            }
            self.count(t, "engine", "n_atoms", &mut c.engine.n_atoms);
        }
        if let Some(t) = self.table(root, "", "pump") {
            self.known(t, "pump", &["polarization", "residual_ratio"]);
            self.float(t, "pump", "polarization", &mut c.sequence.pump.polarization);
            self.float(t, "pump", "residual_ratio", &mut c.sequence.pump.residual_ratio);
        }
        if let Some(t) = self.table(root, "", "w1") {
            self.known(t, "w1", &["mu", "duty_cycle", "duration", "degradation"]);
            let w = &mut c.sequence.w1;
            self.float(t, "w1", "mu", &mut w.mu);
            self.float(t, "w1", "duty_cycle", &mut w.duty_cycle);
            self.float(t, "w1", "duration", &mut w.duration);
            if let Some(d) = self.float_opt(t, "w1", "degradation") {
                w.degradation = Some(d);
            }
        }
        if let Some(t) = self.table(root, "", "gap") {
            self.known(t, "gap", &["tau_gap", "larmor_frequency", "theta"]);
            let g = &mut c.sequence.gap;
            self.float(t, "gap", "tau_gap", &mut g.tau_gap);
            self.float(t, "gap", "larmor_frequency", &mut g.larmor_frequency);
            self.float(t, "gap", "theta", &mut g.theta);
        }
        if let Some(items) = self.tables(root, "", "windows") {
            let mut windows = Vec::new();
            for (p, t) in items {
                self.known(t, &p, &["duration", "kappa2", "shot_var"]);
                let mut w = ProbeWindow { duration: DEFAULT_WINDOW_DURATION, kappa2: 0.0, shot_var: 1.0 };
                match self.float_opt(t, &p, "kappa2") {
                    Some(k) => w.kappa2 = k,
                    None if !t.contains_key("kappa2") => self.error(&p, "missing required key `kappa2`"),
                    None => {}
                }
                self.float(t, &p, "duration", &mut w.duration);
                self.float(t, &p, "shot_var", &mut w.shot_var);
                windows.push(w);
            }
            c.sequence.windows = windows;
        }
        if let Some(t) = self.table(root, "", "decay") {
            self.known(t, "decay", &["enabled", "t1"]);
            let mut enabled = c.sequence.decay.t1.is_some();
            let mut t1 = c.sequence.decay.t1.unwrap_or(DEFAULT_T1);
            self.boolean(t, "decay", "enabled", &mut enabled);
            self.float(t, "decay", "t1", &mut t1);
            c.sequence.decay.t1 = enabled.then_some(t1);
        }
        if let Some(t) = self.table(root, "", "model") {
            self.known(
                t,
                "model",
                &[
                    "stroboscopic", "theta_reference", "decay_basis", "oat_decoherence", "scattering_eta",
                    "rotation_denominator", "duty_cycle",
                ],
            );
            let f = &mut c.engine.flags;
            self.boolean(t, "model", "stroboscopic", &mut f.stroboscopic);
            self.choice(t, "model", "theta_reference", &mut f.theta_reference);
            self.choice(t, "model", "decay_basis", &mut f.decay_basis);
            self.float(t, "model", "oat_decoherence", &mut f.oat_decoherence);
            self.float(t, "model", "scattering_eta", &mut f.scattering_eta);
            self.choice(t, "model", "rotation_denominator", &mut f.rotation_denominator);
            if let Some(d) = self.table(t, "model", "duty_cycle") {
                self.known(d, "model.duty_cycle", &["floor", "ceiling"]);
                self.float(d, "model.duty_cycle", "floor", &mut f.duty_cycle_model.floor);
                self.float(d, "model.duty_cycle", "ceiling", &mut f.duty_cycle_model.ceiling);
            }
        }
        if let Some(t) = self.table(root, "", "sweep") {
            self.known(t, "sweep", &["axis", "start", "stop", "points"]);
            if let Some(a) = self.parameter(t, "sweep", "axis") {
                c.sweep.axis = a;
            }
            c.sweep.start = self.float_opt(t, "sweep", "start").or(c.sweep.start);
            c.sweep.stop = self.float_opt(t, "sweep", "stop").or(c.sweep.stop);
            self.size(t, "sweep", "points", &mut c.sweep.points);
        }
        if let Some(t) = self.table(root, "", "optimize") {
            self.known(t, "optimize", &["parameters", "budget", "grid_resolution", "tolerance"]);
            self.size(t, "optimize", "budget", &mut c.optimize.budget);
            self.size(t, "optimize", "grid_resolution", &mut c.optimize.grid_resolution);
            self.float(t, "optimize", "tolerance", &mut c.optimize.tolerance);
            if let Some(items) = self.tables(t, "optimize", "parameters") {
                let mut bounds = Vec::new();
                for (p, b) in items {
                    self.known(b, &p, &["name", "lower", "upper"]);
                    let name = self.parameter(b, &p, "name");
                    let lower = self.float_opt(b, &p, "lower");
                    let upper = self.float_opt(b, &p, "upper");
                    for key in ["name", "lower", "upper"] {
                        if !b.contains_key(key) {
                            self.error(&p, format!("missing required key `{key}`"));
                        }
                    }
                    if let (Some(parameter), Some(lower), Some(upper)) = (name, lower, upper) {
                        bounds.push(ParameterBound { parameter, lower, upper });
                    }
                }
                c.optimize.parameters = bounds;
            }
        }
        if let Some(t) = self.table(root, "", "rotation_scan") {
            self.known(t, "rotation_scan", &["mu_start", "mu_stop", "points"]);
            self.float(t, "rotation_scan", "mu_start", &mut c.rotation_scan.mu_start);
            self.float(t, "rotation_scan", "mu_stop", &mut c.rotation_scan.mu_stop);
            self.size(t, "rotation_scan", "points", &mut c.rotation_scan.points);
        }
        if let Some(t) = self.table(root, "", "oracle") {
            self.known(t, "oracle", &["n_atoms", "kappa2", "variance_kappa2", "mu"]);
            self.size(t, "oracle", "n_atoms", &mut c.oracle.n_atoms);
            match t.get("kappa2") {
                None => {}
                Some(Value::Array(items)) => {
                    let mut ks = Vec::new();
                    for (i, item) in items.iter().enumerate() {
                        match item {
                            Value::Float(x) => ks.push(*x),
                            Value::Integer(x) => ks.push(*x as f64),
                            other => self.error(
                                &format!("oracle.kappa2[{i}]"),
                                format!("expected a number, found {}", type_name(other)),
                            ),
                        }
                    }
                    c.oracle.kappa2 = ks;
                }
                Some(other) => {
                    self.error("oracle.kappa2", format!("expected an array of numbers, found {}", type_name(other)))
                }
            }
            self.float(t, "oracle", "variance_kappa2", &mut c.oracle.variance_kappa2);
            self.float(t, "oracle", "mu", &mut c.oracle.mu);
        }
        if let Some(t) = self.table(root, "", "compare") {
            self.known(t, "compare", &["measured_db", "error_db"]);
            let measured = self.float_opt(t, "compare", "measured_db");
            let error = self.float_opt(t, "compare", "error_db");
            match (measured, error) {
                (Some(measured_db), Some(error_db)) => c.compare = Some(Comparison { measured_db, error_db }),
                _ => self.error("compare", "needs both `measured_db` and `error_db`"),
            }
        }
        if let Some(t) = self.table(root, "", "output") {
            self.known(t, "output", &["dir", "write_outcomes"]);
            match t.get("dir") {
                None => {}
                Some(Value::String(s)) => c.output.dir = PathBuf::from(s),
                Some(other) => self.error("output.dir", format!("expected a string, found {}", type_name(other))),
            }
            self.boolean(t, "output", "write_outcomes", &mut c.output.write_outcomes);
        }
    }

    fn validate(&mut self, c: &RunConfig) {
        let model_path = |field: &str| {
            if let Some(rest) = field.strip_prefix("flags.") {
                format!("model.{rest}")
            } else if let Some(rest) = field.strip_prefix("duty_cycle_model.") {
                format!("model.duty_cycle.{rest}")
            } else {
                field.to_string()
            }
        };
        let errors = c.sequence.violations().into_iter().chain(c.engine.flags.violations());
        for e in errors {
            match e {
                ProtocolError::InvalidSequence { field, reason } => self.error(&model_path(&field), reason),
                other => self.error("<config>", other.to_string()),
            }
        }
        if c.engine.n_atoms == 0 {
            self.error("engine.n_atoms", "must be at least 1");
        }
        if c.run.mode == Mode::ThreePulse && c.sequence.windows.len() < 3 {
            self.error("windows", format!("three_pulse mode needs 3 probe windows, got {}", c.sequence.windows.len()));
        }
        if c.run.n_cycles != 0 && c.run.n_cycles < MIN_CYCLES {
            self.error("run.n_cycles", format!("must be 0 (analytic only) or at least {MIN_CYCLES}"));
        }
        if c.sweep.points == 0 {
            self.error("sweep.points", "must be at least 1");
        }
        for (key, v) in [("sweep.start", c.sweep.start), ("sweep.stop", c.sweep.stop)] {
            if v.is_some_and(|x| !x.is_finite()) {
                self.error(key, "must be finite");
            }
        }
        for v in c.optimize.problem().violations() {
            self.error("optimize", v);
        }
        let r = &c.rotation_scan;
        if r.points == 0 {
            self.error("rotation_scan.points", "must be at least 1");
        }
        if !(r.mu_start.is_finite() && r.mu_stop.is_finite()) {
            self.error("rotation_scan", "mu_start and mu_stop must be finite");
        }
        let o = &c.oracle;
        if !(2..=MAX_ATOMS).contains(&o.n_atoms) {
            self.error("oracle.n_atoms", format!("must lie in [2, {MAX_ATOMS}], got {}", o.n_atoms));
        }
        if o.kappa2.is_empty() {
            self.error("oracle.kappa2", "needs at least one strength");
        }
        for (i, &k) in o.kappa2.iter().enumerate() {
            if !(k.is_finite() && k > 0.0) {
                self.error(&format!("oracle.kappa2[{i}]"), format!("must be finite and > 0, got {k}"));
            }
        }
        if !(o.variance_kappa2.is_finite() && o.variance_kappa2 > 0.0) {
            self.error("oracle.variance_kappa2", "must be finite and > 0");
        }
        if !o.mu.is_finite() {
            self.error("oracle.mu", "must be finite");
        }
        if let Some(cmp) = c.compare {
            if !(cmp.measured_db.is_finite() && cmp.error_db.is_finite() && cmp.error_db >= 0.0) {
                self.error("compare", "measured_db must be finite and error_db finite and ≥ 0");
            }
        }
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    match Value::try_from(v) {
        Ok(Value::String(s)) => s,
        _ => unreachable!("unit enums serialize to strings"),
    }
}

fn table(pairs: Vec<(&str, Value)>) -> Value {
    Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

impl RunConfig {
    /// Canonical TOML text; [`parse_config`] of it yields `self` again.
    pub fn to_toml(&self) -> String {
        let s = &self.sequence;
        let f = &self.engine.flags;
        let mut root = Table::new();
        root.insert("window_gap".into(), Value::Float(s.window_gap));
        root.insert(
            "run".into(),
            table(vec![
                ("mode", Value::String(enum_name(&self.run.mode))),
                ("n_cycles", Value::Integer(self.run.n_cycles as i64)),
                ("seed", Value::Integer(self.run.seed as i64)),
            ]),
        );
        root.insert(
            "engine".into(),
            table(vec![
                ("spin", Value::Float(self.engine.spin.value())),
                ("n_atoms", Value::Integer(self.engine.n_atoms as i64)),
            ]),
        );
        root.insert(
            "pump".into(),
            table(vec![
                ("polarization", Value::Float(s.pump.polarization)),
                ("residual_ratio", Value::Float(s.pump.residual_ratio)),
            ]),
        );
        let mut w1 = vec![
            ("mu", Value::Float(s.w1.mu)),
            ("duty_cycle", Value::Float(s.w1.duty_cycle)),
            ("duration", Value::Float(s.w1.duration)),
        ];
        if let Some(d) = s.w1.degradation {
            w1.push(("degradation", Value::Float(d)));
        }
        root.insert("w1".into(), table(w1));
        root.insert(
            "gap".into(),
            table(vec![
                ("tau_gap", Value::Float(s.gap.tau_gap)),
                ("larmor_frequency", Value::Float(s.gap.larmor_frequency)),
                ("theta", Value::Float(s.gap.theta)),
            ]),
        );
        root.insert(
            "windows".into(),
            Value::Array(
                s.windows
                    .iter()
                    .map(|w| {
                        table(vec![
                            ("duration", Value::Float(w.duration)),
                            ("kappa2", Value::Float(w.kappa2)),
                            ("shot_var", Value::Float(w.shot_var)),
                        ])
                    })
                    .collect(),
            ),
        );
        let mut decay = vec![("enabled", Value::Boolean(s.decay.t1.is_some()))];
        if let Some(t1) = s.decay.t1 {
            decay.push(("t1", Value::Float(t1)));
        }
        root.insert("decay".into(), table(decay));
        root.insert(
            "model".into(),
            table(vec![
                ("stroboscopic", Value::Boolean(f.stroboscopic)),
                ("theta_reference", Value::String(enum_name(&f.theta_reference))),
                ("decay_basis", Value::String(enum_name(&f.decay_basis))),
                ("oat_decoherence", Value::Float(f.oat_decoherence)),
                ("scattering_eta", Value::Float(f.scattering_eta)),
                ("rotation_denominator", Value::String(enum_name(&f.rotation_denominator))),
                (
                    "duty_cycle",
                    table(vec![
                        ("floor", Value::Float(f.duty_cycle_model.floor)),
                        ("ceiling", Value::Float(f.duty_cycle_model.ceiling)),
                    ]),
                ),
            ]),
        );
        let mut sweep = vec![
            ("axis", Value::String(self.sweep.axis.name().into())),
            ("points", Value::Integer(self.sweep.points as i64)),
        ];
        if let Some(x) = self.sweep.start {
            sweep.push(("start", Value::Float(x)));
        }
        if let Some(x) = self.sweep.stop {
            sweep.push(("stop", Value::Float(x)));
        }
        root.insert("sweep".into(), table(sweep));
        root.insert(
            "optimize".into(),
            table(vec![
                ("budget", Value::Integer(self.optimize.budget as i64)),
                ("grid_resolution", Value::Integer(self.optimize.grid_resolution as i64)),
                ("tolerance", Value::Float(self.optimize.tolerance)),
                (
                    "parameters",
                    Value::Array(
                        self.optimize
                            .parameters
                            .iter()
                            .map(|b| {
                                table(vec![
                                    ("name", Value::String(b.parameter.name().into())),
                                    ("lower", Value::Float(b.lower)),
                                    ("upper", Value::Float(b.upper)),
                                ])
                            })
                            .collect(),
                    ),
                ),
            ]),
        );
        root.insert(
            "rotation_scan".into(),
            table(vec![
                ("mu_start", Value::Float(self.rotation_scan.mu_start)),
                ("mu_stop", Value::Float(self.rotation_scan.mu_stop)),
                ("points", Value::Integer(self.rotation_scan.points as i64)),
            ]),
        );
        root.insert(
            "oracle".into(),
            table(vec![
                ("n_atoms", Value::Integer(self.oracle.n_atoms as i64)),
                ("kappa2", Value::Array(self.oracle.kappa2.iter().map(|&k| Value::Float(k)).collect())),
                ("variance_kappa2", Value::Float(self.oracle.variance_kappa2)),
                ("mu", Value::Float(self.oracle.mu)),
            ]),
        );
        if let Some(cmp) = self.compare {
            root.insert(
                "compare".into(),
                table(vec![
                    ("measured_db", Value::Float(cmp.measured_db)),
                    ("error_db", Value::Float(cmp.error_db)),
                ]),
            );
        }
        root.insert(
            "output".into(),
            table(vec![
                ("dir", Value::String(self.output.dir.to_string_lossy().into_owned())),
                ("write_outcomes", Value::Boolean(self.output.write_outcomes)),
            ]),
        );
        toml::to_string(&root).expect("a plain table always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, Vec<Diagnostic>> {
        parse_config(text, true).map(|p| p.config)
    }

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(parse("").unwrap(), RunConfig::default());
        assert_eq!(parse("# only a comment\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml();
        let again = parse(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), text);

        let custom = r#"
window_gap = 2e-4
[run]
mode = "three_pulse"
seed = 99
[w1]
degradation = 0.25
[decay]
enabled = false
[sweep]
axis = "mu"
start = 0.1
[[optimize.parameters]]
name = "tau_gap"
lower = 0
upper = 1e-5
[compare]
measured_db = -6.21
error_db = 0.84
"#;
        let c = parse(custom).unwrap();
        assert_eq!(c.run.mode, Mode::ThreePulse);
        assert_eq!(c.sequence.decay.t1, None);
        assert_eq!(c.sequence.w1.degradation, Some(0.25));
        assert_eq!(c.optimize.parameters.len(), 1);
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bound_violation_names_field_and_line() {
        let err = parse("[w1]\nmu = 0.2\nduty_cycle = 1.5\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].path, "w1.duty_cycle");
        assert_eq!(err[0].line, Some(3));
        assert!(err[0].to_string().starts_with("line 3: w1.duty_cycle:"));
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "[pump]\npolarization = \"high\"\nbogus = 1\n[[windows]]\nduration = 1e-4\n[model]\ntheta_reference = \"tilted\"\n";
        let err = parse(text).unwrap_err();
        let paths: Vec<&str> = err.iter().map(|d| d.path.as_str()).collect();
        assert!(paths.contains(&"pump.polarization"), "{paths:?}");
        assert!(paths.contains(&"pump.bogus"));
        assert!(paths.contains(&"windows[0]"));
        assert!(paths.contains(&"model.theta_reference"));
        let bogus = err.iter().find(|d| d.path == "pump.bogus").unwrap();
        assert_eq!(bogus.line, Some(3));
    }

    #[test]
    fn lenient_mode_downgrades_unknown_keys() {
        let text = "[gap]\nomega = 3\n";
        assert!(parse(text).is_err());
        let p = parse_config(text, false).unwrap();
        assert_eq!(p.config, RunConfig::default());
        assert_eq!(p.warnings[0].path, "gap.omega");
        assert!(parse_config("[gap]\ntheta = \"x\"\n", false).is_err());
    }

    #[test]
    fn engine_flags_map_to_model_section() {
        let err = parse("[model.duty_cycle]\nfloor = 0.95\n").unwrap_err();
        assert!(err.iter().any(|d| d.path == "model.duty_cycle.ceiling"), "{err:?}");
        let err = parse("[model]\nscattering_eta = -1\n").unwrap_err();
        assert_eq!(err[0].path, "model.scattering_eta");
        assert_eq!(err[0].line, Some(2));
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = parse("[run]\nseed = = 3\n").unwrap_err();
        assert_eq!(err[0].line, Some(2));
    }

    #[test]
    fn integral_floats_are_counts() {
        let c = parse("[engine]\nn_atoms = 1e6\nspin = 1.5\n").unwrap();
        assert_eq!(c.engine.n_atoms, 1_000_000);
        assert_eq!(c.engine.spin, Spin::from_twice(3));
        assert!(parse("[engine]\nspin = 1.2\n").is_err());
    }

    #[test]
    fn sweep_values_include_endpoints() {
        let s = SweepSection { axis: Parameter::Mu, start: Some(0.0), stop: Some(1.0), points: 5 };
        assert_eq!(s.values(), [0.0, 0.25, 0.5, 0.75, 1.0]);
        let d = SweepSection { axis: Parameter::Theta, start: None, stop: None, points: 2 };
        assert_eq!(d.values(), [0.0, std::f64::consts::PI]);
    }
}
