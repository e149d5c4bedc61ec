//! Run configuration: a flat `key = value` file, overridden by the
//! `NIO_SEED` environment variable and then by command-line flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use nio_core::cocycle::DEFAULT_BURNIN;
use nio_core::interval::{SweepOptions, DEFAULT_WIDTH_TOL};
use nio_core::scan::{default_xi_grid, log_grid, Budgets, ScanMode, DEFAULT_TOL_XI};
use nio_core::transfer::StationaryOptions;
use nio_core::{KernelKind, LorenzSkewProduct};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Ascending noise amplitudes to scan.
#[derive(Debug, Clone, PartialEq)]
pub enum XiGrid {
    Default,
    /// `log:lo:hi:n`, optionally prefixed by ξ = 0 (`log0:lo:hi:n`).
    Log {
        lo: f64,
        hi: f64,
        n: usize,
        with_zero: bool,
    },
    List(Vec<f64>),
}

impl XiGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            XiGrid::Default => default_xi_grid(),
            XiGrid::Log {
                lo,
                hi,
                n,
                with_zero,
            } => log_grid(*lo, *hi, *n, *with_zero),
            XiGrid::List(v) => v.clone(),
        }
    }

    fn canonical(&self) -> String {
        match self {
            XiGrid::Default => "default".into(),
            XiGrid::Log {
                lo,
                hi,
                n,
                with_zero,
            } => {
                format!(
                    "{}:{lo:e}:{hi:e}:{n}",
                    if *with_zero { "log0" } else { "log" }
                )
            }
            XiGrid::List(v) => list_canonical(v),
        }
    }
}

impl FromStr for XiGrid {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        if s == "default" {
            return Ok(XiGrid::Default);
        }
        if let Some(rest) = s
            .strip_prefix("log0:")
            .map(|r| (r, true))
            .or(s.strip_prefix("log:").map(|r| (r, false)))
        {
            let (body, with_zero) = rest;
            let parts: Vec<&str> = body.split(':').collect();
            if parts.len() != 3 {
                return Err(err("xi_grid", "expected log:lo:hi:n"));
            }
            let lo: f64 = parse_num("xi_grid", parts[0])?;
            let hi: f64 = parse_num("xi_grid", parts[1])?;
            let n: usize = parse_num("xi_grid", parts[2])?;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
                return Err(err("xi_grid", "need 0 < lo <= hi and n >= 1"));
            }
            return Ok(XiGrid::Log {
                lo,
                hi,
                n,
                with_zero,
            });
        }
        Ok(XiGrid::List(parse_list("xi_grid", s)?))
    }
}

fn parse_num<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| err(field, format!("cannot parse `{}`", v.trim())))
}

fn parse_bool(field: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(err(field, format!("expected true/false, got `{other}`"))),
    }
}

pub fn parse_list(field: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(field, x)).collect()
}

fn list_canonical(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:e}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn mode_name(m: ScanMode) -> &'static str {
    match m {
        ScanMode::Both => "both",
        ScanMode::UlamOnly => "ulam",
        ScanMode::McOnly => "mc",
    }
}

pub fn parse_mode(v: &str) -> Result<ScanMode, ConfigError> {
    match v.trim() {
        "both" => Ok(ScanMode::Both),
        "ulam" => Ok(ScanMode::UlamOnly),
        "mc" => Ok(ScanMode::McOnly),
        other => Err(err(
            "only",
            format!("expected both, ulam or mc, got `{other}`"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub a: f64,
    pub s: f64,
    pub r: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub kernel: KernelKind,
    pub n_cells: usize,
    pub n_steps: u64,
    pub n_burnin: u64,
    pub stationary_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub xi_grid: XiGrid,
    pub xi: f64,
    pub mode: ScanMode,
    pub qr: bool,
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub tol_xi: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub n_points: usize,
    pub width_tol: f64,
    pub warm_start: bool,
    pub verify_xi: Vec<f64>,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = LorenzSkewProduct::default();
        let sweep = SweepOptions::default();
        let st = StationaryOptions::default();
        RunConfig {
            a: m.a(),
            s: m.s(),
            r: m.r(),
            c_plus: m.c_plus(),
            c_minus: m.c_minus(),
            kernel: KernelKind::Uniform,
            n_cells: 4096,
            n_steps: 1_000_000,
            n_burnin: DEFAULT_BURNIN,
            stationary_tol: st.tol,
            max_iter: st.max_iter,
            seed: 0,
            xi_grid: XiGrid::Default,
            xi: 1.0,
            mode: ScanMode::Both,
            qr: true,
            xi_lo: 0.01,
            xi_hi: 10.0,
            tol_xi: DEFAULT_TOL_XI,
            a_lo: sweep.a_lo,
            a_hi: sweep.a_hi,
            n_points: sweep.n_points,
            width_tol: DEFAULT_WIDTH_TOL,
            warm_start: true,
            verify_xi: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            workers: 0,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (key, v) = (key.trim(), value.trim());
        match key {
            "a" => self.a = parse_num(key, v)?,
            "s" => self.s = parse_num(key, v)?,
            "r" => self.r = parse_num(key, v)?,
            "c_plus" => self.c_plus = parse_num(key, v)?,
            "c_minus" => self.c_minus = parse_num(key, v)?,
            "kernel" => {
                self.kernel = v
                    .parse()
                    .map_err(|e: nio_core::NioError| err(key, e.to_string()))?
            }
            "n_cells" => self.n_cells = parse_num(key, v)?,
            "n_steps" => self.n_steps = parse_num(key, v)?,
            "n_burnin" => self.n_burnin = parse_num(key, v)?,
            "stationary_tol" => self.stationary_tol = parse_num(key, v)?,
            "max_iter" => self.max_iter = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "xi_grid" => self.xi_grid = v.parse()?,
            "xi" => self.xi = parse_num(key, v)?,
            "only" => self.mode = parse_mode(v)?,
            "qr" => self.qr = parse_bool(key, v)?,
            "xi_lo" => self.xi_lo = parse_num(key, v)?,
            "xi_hi" => self.xi_hi = parse_num(key, v)?,
            "tol_xi" => self.tol_xi = parse_num(key, v)?,
            "a_lo" => self.a_lo = parse_num(key, v)?,
            "a_hi" => self.a_hi = parse_num(key, v)?,
            "n_points" => self.n_points = parse_num(key, v)?,
            "width_tol" => self.width_tol = parse_num(key, v)?,
            "warm_start" => self.warm_start = parse_bool(key, v)?,
            "verify_xi" => self.verify_xi = parse_list(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(err(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(err(
                    &format!("line {}", lineno + 1),
                    format!("expected key = value, got `{line}`"),
                ));
            };
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<LorenzSkewProduct, ConfigError> {
        LorenzSkewProduct::new(self.a, self.s, self.r, self.c_plus, self.c_minus).map_err(|e| {
            match e {
                nio_core::NioError::InvalidParameter { field, reason } => err(field, reason),
                other => err("params", other.to_string()),
            }
        })
    }

    /// Field-level checks; run before any computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model()?;
        if self.n_cells < 64 || !self.n_cells.is_power_of_two() {
            return Err(err(
                "n_cells",
                format!("{} must be a power of two >= 64", self.n_cells),
            ));
        }
        if self.n_steps < nio_core::cocycle::MIN_STEPS {
            return Err(err(
                "n_steps",
                format!("must be at least {}", nio_core::cocycle::MIN_STEPS),
            ));
        }
        if !(self.stationary_tol > 0.0) || self.max_iter == 0 {
            return Err(err(
                "stationary_tol",
                "tolerance and max_iter must be positive",
            ));
        }
        let grid = self.xi_grid.points();
        if grid.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || grid.windows(2).any(|w| w[1] < w[0])
        {
            return Err(err(
                "xi_grid",
                "amplitudes must be nonnegative and ascending",
            ));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(err("xi", "must be finite and nonnegative"));
        }
        if !(self.xi_lo >= 0.0 && self.xi_lo < self.xi_hi && self.xi_hi.is_finite()) {
            return Err(err("xi_lo", "need 0 <= xi_lo < xi_hi"));
        }
        if !(self.tol_xi > 0.0) {
            return Err(err("tol_xi", "must be positive"));
        }
        if !(self.a_lo > 0.0 && self.a_lo <= self.a_hi && self.a_hi <= 2.0) {
            return Err(err("a_lo", "need 0 < a_lo <= a_hi <= 2"));
        }
        if self.n_points == 0 {
            return Err(err("n_points", "must be at least 1"));
        }
        if !(self.width_tol > 0.0) {
            return Err(err("width_tol", "must be positive"));
        }
        if self.verify_xi.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(err("verify_xi", "amplitudes must be positive"));
        }
        Ok(())
    }

    pub fn budgets(&self) -> Budgets {
        Budgets {
            n_steps: self.n_steps,
            n_burnin: self.n_burnin,
            n_cells: self.n_cells,
            master_seed: self.seed,
            stationary: StationaryOptions {
                tol: self.stationary_tol,
                max_iter: self.max_iter,
            },
            with_qr: self.qr,
            mode: self.mode,
        }
    }

    pub fn sweep(&self) -> SweepOptions {
        SweepOptions {
            a_lo: self.a_lo,
            a_hi: self.a_hi,
            n_points: self.n_points,
            width_tol: self.width_tol,
            warm_start: self.warm_start,
        }
    }

    /// Canonical `key=value` listing of every setting that affects results
    /// (`workers` and `out_dir` do not).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("a", format!("{:e}", self.a));
        kv("a_hi", format!("{:e}", self.a_hi));
        kv("a_lo", format!("{:e}", self.a_lo));
        kv("c_minus", format!("{:e}", self.c_minus));
        kv("c_plus", format!("{:e}", self.c_plus));
        kv("kernel", self.kernel.to_string());
        kv("max_iter", self.max_iter.to_string());
        kv("n_burnin", self.n_burnin.to_string());
        kv("n_cells", self.n_cells.to_string());
        kv("n_points", self.n_points.to_string());
        kv("n_steps", self.n_steps.to_string());
        kv("only", mode_name(self.mode).into());
        kv("qr", self.qr.to_string());
        kv("r", format!("{:e}", self.r));
        kv("s", format!("{:e}", self.s));
        kv("seed", self.seed.to_string());
        kv("stationary_tol", format!("{:e}", self.stationary_tol));
        kv("tol_xi", format!("{:e}", self.tol_xi));
        kv("verify_xi", list_canonical(&self.verify_xi));
        kv("warm_start", self.warm_start.to_string());
        kv("width_tol", format!("{:e}", self.width_tol));
        kv("xi", format!("{:e}", self.xi));
        kv("xi_grid", self.xi_grid.canonical());
        kv("xi_hi", format!("{:e}", self.xi_hi));
        kv("xi_lo", format!("{:e}", self.xi_lo));
        s
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
