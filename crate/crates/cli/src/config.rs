//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Subcommands of the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exponents,
    PropagateLinear,
    SolveSemilinear,
    VerifyEstimates,
    CompareOracle,
    BlowupProbe,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Exponents,
        Command::PropagateLinear,
        Command::SolveSemilinear,
        Command::VerifyEstimates,
        Command::CompareOracle,
        Command::BlowupProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Exponents => "exponents",
            Command::PropagateLinear => "propagate-linear",
            Command::SolveSemilinear => "solve-semilinear",
            Command::VerifyEstimates => "verify-estimates",
            Command::CompareOracle => "compare-oracle",
            Command::BlowupProbe => "blowup-probe",
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid("command", format!("unknown subcommand `{s}`")))
    }
}

/// Initial data for the linear and oracle runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// `f = eps r^{1-m} <r>^{-kbar-3/2}`, `g = eps r^{-m} <r>^{-kbar-3/2}`.
    Family,
    /// `f = eps * bump` on `[bump_lo, bump_hi]`, `g = 0`.
    Bump,
    Zero,
}

impl FromStr for DataKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "family" => Ok(DataKind::Family),
            "bump" => Ok(DataKind::Bump),
            "zero" => Ok(DataKind::Zero),
            _ => Err(format!("expected family, bump or zero, got `{s}`")),
        }
    }
}

impl DataKind {
    fn name(self) -> &'static str {
        match self {
            DataKind::Family => "family",
            DataKind::Bump => "bump",
            DataKind::Zero => "zero",
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub n: u32,
    pub mu: f64,
    pub p: f64,
    pub kappa: f64,
    pub kappa_bar: f64,
    pub epsilon: f64,
    pub tmax: f64,
    pub rmin: f64,
    pub rmax: f64,
    /// `NTxNR` for tensor grids, cells per unit length for the oracle.
    pub grid: String,
    pub tol: f64,
    pub max_iter: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub data: DataKind,
    pub bump_lo: f64,
    pub bump_hi: f64,
    /// Relative jitter of the evaluation nodes in log coordinates.
    pub jitter: f64,
    pub cfl: f64,
    pub times: Vec<f64>,
    pub window_lo: f64,
    pub window_hi: f64,
    pub spacing: f64,
    pub epsilons: Vec<f64>,
    pub powers: Vec<f64>,
    pub threshold: f64,
    pub lattice_extent: f64,
}

const KEYS: &[&str] = &[
    "command",
    "n",
    "mu",
    "p",
    "kappa",
    "kappa_bar",
    "epsilon",
    "tmax",
    "rmin",
    "rmax",
    "grid",
    "tol",
    "max_iter",
    "out",
    "seed",
    "data",
    "bump_lo",
    "bump_hi",
    "jitter",
    "cfl",
    "times",
    "window_lo",
    "window_hi",
    "spacing",
    "epsilons",
    "powers",
    "threshold",
    "lattice_extent",
];

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(v) if v == "auto" => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|e| invalid(key, format!("`{v}`: {e}"))),
    }
}

fn parse_list(map: &BTreeMap<String, String>, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
    let Some(v) = map.get(key) else { return Ok(None) };
    v.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(key, format!("`{s}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn finite(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, "must be finite"))
    }
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    /// Resolve a key-value map for `command`, filling defaults.
    pub fn resolve(command: Command, map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        if let Some(c) = map.get("command") {
            let named: Command = c.parse()?;
            if named != command {
                return Err(invalid("command", format!("config is for `{c}`, running `{}`", command.name())));
            }
        }
        let n: u32 = parse(map, "n")?.unwrap_or(4);
        let mu = finite("mu", parse(map, "mu")?.unwrap_or(2.0))?;
        let p = match parse::<f64>(map, "p")? {
            Some(p) => finite("p", p)?,
            None => scalewave_core::exponents::default_p(n, mu).map_err(|e| invalid("p", format!("no default: {e}")))?,
        };
        let kappa = match parse::<f64>(map, "kappa")? {
            Some(k) => finite("kappa", k)?,
            None => scalewave_core::exponents::default_kappa(n, mu, p),
        };
        let kappa_bar = finite("kappa_bar", parse(map, "kappa_bar")?.unwrap_or(kappa))?;
        let fd = matches!(command, Command::CompareOracle | Command::BlowupProbe);
        let (tmax_default, rmax_default, grid_default) = match command {
            Command::CompareOracle => (4.0, 8.0, "128"),
            Command::BlowupProbe => (10.0, 24.0, "32"),
            Command::SolveSemilinear => (32.0, 32.0, "64x64"),
            _ => (32.0, 32.0, "16x16"),
        };
        let data_default = if fd { DataKind::Bump } else { DataKind::Family };
        let epsilon = parse(map, "epsilon")?.unwrap_or(if fd { 1.0 } else { 1e-3 });
        if !(epsilon >= 0.0 && f64::is_finite(epsilon)) {
            return Err(invalid("epsilon", format!("must be finite and >= 0, got {epsilon}")));
        }
        let times = match parse_list(map, "times")? {
            Some(t) => t,
            None if command == Command::CompareOracle => vec![1.0, 2.0, 4.0],
            None => Vec::new(),
        };
        let cfg = Self {
            command,
            n,
            mu,
            p,
            kappa,
            kappa_bar,
            epsilon,
            tmax: positive("tmax", parse(map, "tmax")?.unwrap_or(tmax_default))?,
            rmin: positive("rmin", parse(map, "rmin")?.unwrap_or(1e-3))?,
            rmax: positive("rmax", parse(map, "rmax")?.unwrap_or(rmax_default))?,
            grid: parse(map, "grid")?.unwrap_or_else(|| grid_default.to_string()),
            tol: positive("tol", parse(map, "tol")?.unwrap_or(1e-6))?,
            max_iter: parse(map, "max_iter")?.unwrap_or(30),
            out: parse(map, "out")?.unwrap_or_else(|| PathBuf::from("out")),
            seed: parse(map, "seed")?.unwrap_or(0),
            data: parse(map, "data")?.unwrap_or(data_default),
            bump_lo: finite("bump_lo", parse(map, "bump_lo")?.unwrap_or(2.0))?,
            bump_hi: finite("bump_hi", parse(map, "bump_hi")?.unwrap_or(3.0))?,
            jitter: finite("jitter", parse(map, "jitter")?.unwrap_or(0.0))?,
            cfl: positive("cfl", parse(map, "cfl")?.unwrap_or(0.9))?,
            times,
            window_lo: positive("window_lo", parse(map, "window_lo")?.unwrap_or(1.0))?,
            window_hi: positive("window_hi", parse(map, "window_hi")?.unwrap_or(8.0))?,
            spacing: positive("spacing", parse(map, "spacing")?.unwrap_or(1.0 / 32.0))?,
            epsilons: parse_list(map, "epsilons")?.unwrap_or_else(|| vec![0.0, 0.01, 0.1, 1.0, 10.0]),
            powers: parse_list(map, "powers")?.unwrap_or_else(|| vec![p]),
            threshold: positive("threshold", parse(map, "threshold")?.unwrap_or(0.10))?,
            lattice_extent: positive("lattice_extent", parse(map, "lattice_extent")?.unwrap_or(1e3))?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(self.bump_lo >= 0.0 && self.bump_hi > self.bump_lo) {
            return Err(invalid("bump_lo", "need 0 <= bump_lo < bump_hi"));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(invalid("jitter", format!("must lie in [0, 0.5), got {}", self.jitter)));
        }
        if self.rmax <= self.rmin {
            return Err(invalid("rmax", format!("must exceed rmin = {}", self.rmin)));
        }
        if self.window_hi <= self.window_lo {
            return Err(invalid("window_hi", format!("must exceed window_lo = {}", self.window_lo)));
        }
        if let Some(t) = self.times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(invalid("times", format!("times must be finite and >= 0, got {t}")));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(invalid("epsilons", format!("amplitudes must be finite and >= 0, got {e}")));
        }
        if self.powers.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
            return Err(invalid("powers", "powers must exceed 1"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        match self.command {
            Command::CompareOracle | Command::BlowupProbe => {
                self.cells_per_unit()?;
            }
            Command::PropagateLinear | Command::SolveSemilinear => {
                self.tensor_grid()?;
            }
            _ => {}
        }
        Ok(())
    }

    /// `grid` as `(nt, nr)`; a single number gives a square grid.
    pub fn tensor_grid(&self) -> Result<(usize, usize), ConfigError> {
        let bad = || invalid("grid", format!("expected NTxNR with both >= 4, got `{}`", self.grid));
        let (a, b) = self.grid.split_once('x').unwrap_or((&self.grid, &self.grid));
        let nt: usize = a.trim().parse().map_err(|_| bad())?;
        let nr: usize = b.trim().parse().map_err(|_| bad())?;
        if nt < 4 || nr < 4 {
            return Err(bad());
        }
        Ok((nt, nr))
    }

    /// `grid` as cells per unit length of the oracle.
    pub fn cells_per_unit(&self) -> Result<u32, ConfigError> {
        match self.grid.trim().parse::<u32>() {
            Ok(c) if c >= 2 => Ok(c),
            _ => Err(invalid("grid", format!("expected cells per unit length >= 2, got `{}`", self.grid))),
        }
    }

    /// Every key in a stable order; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let entries: Vec<(&str, String)> = vec![
            ("command", self.command.name().to_string()),
            ("n", self.n.to_string()),
            ("mu", self.mu.to_string()),
            ("p", self.p.to_string()),
            ("kappa", self.kappa.to_string()),
            ("kappa_bar", self.kappa_bar.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("tmax", self.tmax.to_string()),
            ("rmin", self.rmin.to_string()),
            ("rmax", self.rmax.to_string()),
            ("grid", self.grid.clone()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("data", self.data.name().to_string()),
            ("bump_lo", self.bump_lo.to_string()),
            ("bump_hi", self.bump_hi.to_string()),
            ("jitter", self.jitter.to_string()),
            ("cfl", self.cfl.to_string()),
            ("times", list(&self.times)),
            ("window_lo", self.window_lo.to_string()),
            ("window_hi", self.window_hi.to_string()),
            ("spacing", self.spacing.to_string()),
            ("epsilons", list(&self.epsilons)),
            ("powers", list(&self.powers)),
            ("threshold", self.threshold.to_string()),
            ("lattice_extent", self.lattice_extent.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in entries {
            // An empty list is written as an absent key.
            if !v.is_empty() {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}
