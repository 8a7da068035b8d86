//! `scalewave`: experiments on radial damped semilinear waves.

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_text, Command, ConfigError, ExperimentConfig};
use output::{ensure_dir, write_text, AppError};

#[derive(Parser)]
#[command(name = "scalewave", version, about = "Kernels, Duhamel iteration, estimate checks and an FD oracle for radial damped waves")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Critical exponents and the admissible window.
    Exponents(Common),
    /// Evaluate the linear solution on a (t, r) grid.
    PropagateLinear(Common),
    /// Picard iteration for the semilinear problem.
    SolveSemilinear(Common),
    /// Numerical checks of the integral inequalities.
    VerifyEstimates(Common),
    /// Finite-difference oracle against the kernel propagator.
    CompareOracle(Common),
    /// Amplitude and power sweep of the finite-difference oracle.
    BlowupProbe(Common),
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::Exponents(c) => (Command::Exponents, c),
            Sub::PropagateLinear(c) => (Command::PropagateLinear, c),
            Sub::SolveSemilinear(c) => (Command::SolveSemilinear, c),
            Sub::VerifyEstimates(c) => (Command::VerifyEstimates, c),
            Sub::CompareOracle(c) => (Command::CompareOracle, c),
            Sub::BlowupProbe(c) => (Command::BlowupProbe, c),
        }
    }
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    tmax: Option<String>,
    #[arg(long)]
    rmax: Option<String>,
    /// `NTxNR` for tensor grids, cells per unit length for the oracle.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn into_map(self) -> Result<BTreeMap<String, String>, AppError> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| AppError::ReadConfig {
                    path: path.clone(),
                    source,
                })?;
                parse_text(&text)?
            }
            None => BTreeMap::new(),
        };
        for kv in &self.set {
            let overrides = parse_text(kv).map_err(|e| match e {
                ConfigError::Syntax { .. } => ConfigError::Invalid {
                    key: "set".into(),
                    reason: format!("expected KEY=VALUE, got `{kv}`"),
                },
                other => other,
            })?;
            map.extend(overrides);
        }
        let flags = [
            ("n", self.n),
            ("mu", self.mu),
            ("p", self.p),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("tmax", self.tmax),
            ("rmax", self.rmax),
            ("grid", self.grid),
            ("tol", self.tol),
            ("max_iter", self.max_iter),
            ("out", self.out),
            ("seed", self.seed),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(map)
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SCALEWAVE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn execute(sub: Sub) -> Result<(), AppError> {
    let (command, common) = sub.split();
    let cfg = ExperimentConfig::resolve(command, &common.into_map()?)?;
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.snapshot"), &cfg.to_text())?;
    commands::run(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
