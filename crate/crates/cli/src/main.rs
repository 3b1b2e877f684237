//! Command line driver for the fractional obstacle and QVI solvers.

mod config;
mod output;
mod run;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sha2::{Digest, Sha256};

use config::{merge, normalize_key, read_config_file, Mode, RunConfig, SWEEP};
use output::{num, Csv};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(fqvi::Error),

    #[error("outer iteration did not converge within n_max = {0} steps")]
    NotConverged(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<fqvi::Error> for CliError {
    fn from(e: fqvi::Error) -> Self {
        match e {
            fqvi::Error::Parameter { .. } | fqvi::Error::Grading { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::Solver(e),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Values are parsed and validated after merging with the config file, so
/// they are taken as text here.
#[derive(Debug, Parser)]
#[command(name = "fqvi", version, about)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,

    /// Example number for `paper-example` (same as --paper-example).
    example: Option<String>,

    /// key=value file; flags take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Compare against the spectral (linear) or dense PSOR (vi) oracle.
    #[arg(long)]
    oracle: bool,

    /// Fractional order in (0,1).
    #[arg(long)]
    s: Option<String>,
    /// Base dimension, 1 or 2.
    #[arg(long)]
    n_dim: Option<String>,
    /// Cells per axis of the base mesh.
    #[arg(long)]
    m: Option<String>,
    /// Layers of the graded mesh in the extended variable.
    #[arg(long)]
    layers: Option<String>,
    /// Grading exponent, or `auto`.
    #[arg(long)]
    gamma: Option<String>,
    /// Truncation height (`auto`), or a comma list for `truncation`.
    #[arg(long)]
    tau: Option<String>,
    /// Tail layers per unit height in `truncation`.
    #[arg(long)]
    tail_per_unit: Option<String>,
    /// none | constant:V | example1[:scale,delta] | example2[:scale,delta] |
    /// example3[:nu] | example4[:scale,delta]
    #[arg(long)]
    obstacle: Option<String>,
    /// bump | one | eigenfunction:k,l | file:PATH
    #[arg(long)]
    f: Option<String>,
    #[arg(long)]
    eps1: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    #[arg(long)]
    eps2: Option<String>,
    #[arg(long)]
    theta0: Option<String>,
    #[arg(long)]
    theta_ratio: Option<String>,
    #[arg(long)]
    theta_max: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    mu_bar: Option<String>,
    /// condensed | pcg
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    pcg_tol: Option<String>,
    /// lumped | consistent
    #[arg(long)]
    mass: Option<String>,
    #[arg(long)]
    oracle_k_max: Option<String>,
    #[arg(long)]
    psor_tol: Option<String>,
    #[arg(long)]
    psor_max_sweeps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Load the settings of example 1..4.
    #[arg(long)]
    paper_example: Option<String>,
}

impl Cli {
    fn flag_map(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("s", &self.s),
            ("n_dim", &self.n_dim),
            ("m", &self.m),
            ("layers", &self.layers),
            ("gamma", &self.gamma),
            ("tau", &self.tau),
            ("tail_per_unit", &self.tail_per_unit),
            ("obstacle", &self.obstacle),
            ("f", &self.f),
            ("eps1", &self.eps1),
            ("n_max", &self.n_max),
            ("eps2", &self.eps2),
            ("theta0", &self.theta0),
            ("theta_ratio", &self.theta_ratio),
            ("theta_max", &self.theta_max),
            ("k_max", &self.k_max),
            ("mu_bar", &self.mu_bar),
            ("backend", &self.backend),
            ("pcg_tol", &self.pcg_tol),
            ("mass", &self.mass),
            ("oracle_k_max", &self.oracle_k_max),
            ("psor_tol", &self.psor_tol),
            ("psor_max_sweeps", &self.psor_max_sweeps),
            ("seed", &self.seed),
            ("paper_example", &self.paper_example),
        ];
        let mut map: BTreeMap<String, String> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (normalize_key(k), v.clone())))
            .collect();
        if self.oracle {
            map.insert("oracle".into(), "true".into());
        }
        if let Some(n) = &self.example {
            map.insert("paper_example".into(), n.clone());
        }
        map
    }
}

fn converged(cfg: &RunConfig, summary: Option<run::QviSummary>) -> Result<(), CliError> {
    match summary {
        Some(sm) if !sm.converged => Err(CliError::NotConverged(cfg.qvi.n_max)),
        _ => Ok(()),
    }
}

fn sweep(map: &BTreeMap<String, String>, out: &PathBuf) -> Result<(), CliError> {
    // resolve everything first so a bad value fails before any solve
    let mut runs = Vec::new();
    for s in SWEEP {
        let mut m = map.clone();
        m.insert("s".into(), s.to_string());
        runs.push(RunConfig::resolve(
            Mode::Qvi,
            &m,
            out.join(format!("s{s}")),
        )?);
    }
    std::fs::create_dir_all(out).map_err(|e| {
        CliError::Config(format!(
            "cannot create output directory {}: {e}",
            out.display()
        ))
    })?;
    let mut all = String::new();
    for r in &runs {
        let _ = writeln!(all, "{}", r.render());
    }
    let hash = hex::encode(Sha256::digest(all.as_bytes()));
    let mut csv = Csv::create(
        &out.join("sweep.csv"),
        &hash,
        &[
            "s",
            "outer_iters",
            "converged",
            "active_count",
            "trace_max",
            "config_hash",
        ],
    )?;
    let mut failure = None;
    for r in &runs {
        match run::run(r) {
            Ok(Some(sm)) => {
                csv.row(&[
                    r.s.to_string(),
                    sm.outer_iters.to_string(),
                    u8::from(sm.converged).to_string(),
                    sm.active_count.to_string(),
                    num(sm.trace_max),
                    r.hash(),
                ])?;
                if let Err(e) = converged(r, Some(sm)) {
                    eprintln!("s = {}: {e}", r.s);
                    failure.get_or_insert(e);
                }
            }
            Ok(None) => unreachable!("sweep runs are qvi runs"),
            Err(e) => {
                eprintln!("s = {}: {e}", r.s);
                failure.get_or_insert(e);
            }
        }
    }
    failure.map_or(Ok(()), Err)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let map = merge(file, cli.flag_map())?;
    if cli.mode == Mode::PaperExample {
        RunConfig::resolve(Mode::PaperExample, &map, cli.out.clone())?;
        return sweep(&map, &cli.out);
    }
    let cfg = RunConfig::resolve(cli.mode, &map, cli.out.clone())?;
    let summary = run::run(&cfg)?;
    converged(&cfg, summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fqvi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
