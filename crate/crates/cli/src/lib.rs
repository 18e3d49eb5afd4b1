//! Command-line driver for `coopsqueeze`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! numerical or I/O failures (including a failed oracle check or a sweep
//! in which every point failed).

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use coopsqueeze::Parameter;

use crate::commands::{Outcome, RuntimeFailure};
use crate::config::{parse_config, RunConfig};
use crate::output::{sha256_hex, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "coopsqueeze", version, about = "Cooperative internal and collective spin squeezing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply to every omitted key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`; at most 2^63 − 1 so it fits a TOML integer.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "COOPSQUEEZE_THREADS")]
    pub threads: Option<usize>,
    /// Report unknown configuration keys as warnings instead of errors.
    #[arg(long, global = true)]
    pub lenient: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic chain plus optional Monte Carlo sampling.
    Simulate {
        /// Overrides `run.n_cycles`; 0 skips the Monte Carlo.
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// One-parameter sweep of the analytic chain.
    Sweep {
        /// Overrides `sweep.axis` (duty_cycle, mu, theta, kappa2, tau_gap).
        #[arg(long)]
        axis: Option<Parameter>,
        /// Overrides `sweep.points`.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Grid plus golden-section minimization of ξ²_tot.
    Optimize,
    /// Few-atom exact checks of the Gaussian and pair-excitation models.
    OracleCheck,
    /// Twist-induced mean-spin rotation against μ.
    RotationScan,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::Optimize => "optimize",
            Command::OracleCheck => "oracle-check",
            Command::RotationScan => "rotation-scan",
        }
    }
}

fn load(cli: &Cli, err: &mut dyn Write) -> Result<RunConfig, i32> {
    let mut config = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
                EXIT_CONFIG
            })?;
            match parse_config(&text, !cli.lenient) {
                Ok(parsed) => {
                    for w in &parsed.warnings {
                        let _ = writeln!(err, "warning: {}: {w}", path.display());
                    }
                    parsed.config
                }
                Err(diagnostics) => {
                    for d in &diagnostics {
                        let _ = writeln!(err, "error: {}: {d}", path.display());
                    }
                    let n = diagnostics.len();
                    let _ = writeln!(err, "{n} configuration error{}", if n == 1 { "" } else { "s" });
                    return Err(EXIT_CONFIG);
                }
            }
        }
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    match &cli.command {
        Command::Simulate { cycles: Some(n) } => config.run.n_cycles = *n,
        Command::Sweep { axis, points } => {
            if let Some(a) = axis {
                if *a != config.sweep.axis {
                    config.sweep.axis = *a;
                    config.sweep.start = None;
                    config.sweep.stop = None;
                }
            }
            if let Some(p) = points {
                config.sweep.points = *p;
            }
        }
        _ => {}
    }
    // overrides are validated like file contents
    if let Err(diagnostics) = parse_config(&config.to_toml(), true) {
        for d in &diagnostics {
            let _ = writeln!(err, "error: {}", d);
        }
        return Err(EXIT_CONFIG);
    }
    Ok(config)
}

/// Runs the CLI with explicit arguments and streams, returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let config = match load(&cli, err) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let threads = match cli.threads {
        Some(0) => {
            let _ = writeln!(err, "error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start {threads} threads: {e}");
            return EXIT_RUNTIME;
        }
    };

    let started = Instant::now();
    let result: Result<Outcome, RuntimeFailure> = pool.install(|| match &cli.command {
        Command::Simulate { .. } => commands::simulate(&config),
        Command::Sweep { .. } => commands::sweep_command(&config),
        Command::Optimize => commands::optimize_command(&config),
        Command::OracleCheck => commands::oracle_check(&config),
        Command::RotationScan => commands::rotation_scan_command(&config),
    });
    let (outcome, failure) = match result {
        Ok(o) => (Some(o), None),
        Err(RuntimeFailure { message, partial }) => (partial, Some(message)),
    };
    if let Some(outcome) = outcome {
        for line in &outcome.lines {
            let _ = writeln!(out, "{line}");
        }
        let config_text = config.to_toml();
        let manifest = Manifest {
            tool: "coopsqueeze".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            core_version: coopsqueeze::VERSION.into(),
            subcommand: cli.command.name().into(),
            seed: config.run.seed,
            threads,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config: config_text,
            wall_time_s: started.elapsed().as_secs_f64(),
            files: Vec::new(),
        };
        match outcome.files.write(manifest) {
            Ok(paths) => {
                let _ = writeln!(out, "wrote {} files to {}", paths.len(), config.output.dir.display());
            }
            Err(e) => {
                let _ = writeln!(err, "error: writing to {}: {e}", config.output.dir.display());
                return EXIT_RUNTIME;
            }
        }
    }
    match failure {
        Some(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_RUNTIME
        }
        None => EXIT_OK,
    }
}
