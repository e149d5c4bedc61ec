//! The `nio` command line: configuration handling, output files and one
//! subcommand per top-level operation of `nio-core`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nio_core::interval::{write_zeroset_csv, zero_set_sweep};
use nio_core::scan::{self, write_scan_csv, write_verify_csv};
use nio_core::transfer::{build_ulam, stationary_density};
use nio_core::{NoiseKernel, ScaledKernel};
use serde::Serialize;

pub use config::{ConfigError, RunConfig, XiGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "nio",
    version,
    about = "Noise-induced order lab for contracting Lorenz skew products"
)]
#[command(allow_negative_numbers = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides NIO_SEED and the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    c_plus: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    c_minus: Option<f64>,
    /// uniform | quadratic_bump
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    n_cells: Option<usize>,
    #[arg(long, global = true)]
    n_steps: Option<u64>,
    #[arg(long, global = true)]
    n_burnin: Option<u64>,
    /// Any config key, as key=value (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Exponents along a noise-amplitude grid, plus the transition bracket
    Scan {
        /// Comma-separated amplitudes replacing the configured grid
        #[arg(long, value_delimiter = ',')]
        xi: Option<Vec<f64>>,
        /// both | ulam | mc
        #[arg(long)]
        only: Option<String>,
        #[arg(long)]
        no_qr: bool,
        #[arg(long)]
        tol_xi: Option<f64>,
    },
    /// Bisect the sign change of the top exponent
    Bracket {
        #[arg(long)]
        xi_lo: Option<f64>,
        #[arg(long)]
        xi_hi: Option<f64>,
        #[arg(long)]
        tol_xi: Option<f64>,
    },
    /// Certified zero set of the large-noise base exponent
    Zeroset {
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        a_range: Option<Vec<f64>>,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        width_tol: Option<f64>,
        /// Solve every point from the full bracket, in parallel
        #[arg(long)]
        cold: bool,
    },
    /// Stationary density of the annealed operator
    Stationary {
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Sampled graph of the base map
    Mapplot,
    /// QR top exponent against max(base, fiber)
    Verify {
        #[arg(long, value_delimiter = ',')]
        xi: Option<Vec<f64>>,
    },
}

fn cfg_err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        reason: reason.into(),
    }
}

fn build_config(cli: &Cli, env_seed: Option<String>) -> Result<RunConfig, ConfigError> {
    let mut c = RunConfig::default();
    let common = &cli.common;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err("config", format!("{}: {e}", path.display())))?;
        c.apply_text(&text)?;
    }
    if let Some(s) = env_seed {
        c.seed = s
            .trim()
            .parse()
            .map_err(|_| cfg_err("NIO_SEED", format!("cannot parse `{s}`")))?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| cfg_err("set", format!("expected KEY=VALUE, got `{kv}`")))?;
        c.set(k, v)?;
    }
    macro_rules! over {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    over!(common.seed, c.seed);
    over!(common.workers, c.workers);
    over!(common.out, c.out_dir);
    over!(common.a, c.a);
    over!(common.s, c.s);
    over!(common.r, c.r);
    over!(common.c_plus, c.c_plus);
    over!(common.c_minus, c.c_minus);
    over!(common.n_cells, c.n_cells);
    over!(common.n_steps, c.n_steps);
    over!(common.n_burnin, c.n_burnin);
    if let Some(k) = &common.kernel {
        c.set("kernel", k)?;
    }
    match &cli.cmd {
        Cmd::Scan {
            xi,
            only,
            no_qr,
            tol_xi,
        } => {
            if let Some(x) = xi {
                c.xi_grid = XiGrid::List(x.clone());
            }
            if let Some(o) = only {
                c.mode = config::parse_mode(o)?;
            }
            if *no_qr {
                c.qr = false;
            }
            over!(tol_xi, c.tol_xi);
        }
        Cmd::Bracket {
            xi_lo,
            xi_hi,
            tol_xi,
        } => {
            over!(xi_lo, c.xi_lo);
            over!(xi_hi, c.xi_hi);
            over!(tol_xi, c.tol_xi);
        }
        Cmd::Zeroset {
            a_range,
            n_points,
            width_tol,
            cold,
        } => {
            if let Some(r) = a_range {
                c.a_lo = r[0];
                c.a_hi = r[1];
            }
            over!(n_points, c.n_points);
            over!(width_tol, c.width_tol);
            if *cold {
                c.warm_start = false;
            }
        }
        Cmd::Stationary { xi } => over!(xi, c.xi),
        Cmd::Mapplot => {}
        Cmd::Verify { xi } => over!(xi, c.verify_xi),
    }
    c.validate()?;
    Ok(c)
}

fn header(cfg: &RunConfig, command: &str) -> String {
    format!(
        "# nio {command}\n# config_hash={}\n# seed={}\n",
        cfg.hash(),
        cfg.seed
    )
}

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory, so the final path never holds a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> std::io::Result<PathBuf> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

fn csv_file(
    cfg: &RunConfig,
    command: &str,
    name: &str,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<PathBuf, String> {
    let mut buf = header(cfg, command).into_bytes();
    body(&mut buf).map_err(|e| e.to_string())?;
    write_atomic(&cfg.out_dir, name, &buf).map_err(|e| format!("writing {name}: {e}"))
}

fn json_file<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Result<PathBuf, String> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| e.to_string())?;
    buf.push(b'\n');
    write_atomic(&cfg.out_dir, name, &buf).map_err(|e| format!("writing {name}: {e}"))
}

fn mother(cfg: &RunConfig) -> NoiseKernel {
    match cfg.kernel {
        nio_core::KernelKind::Uniform => NoiseKernel::uniform(),
        nio_core::KernelKind::QuadraticBump => NoiseKernel::quadratic_bump(),
    }
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    config_hash: String,
    seed: u64,
    rows: &'a [scan::ScanRow],
    failures: usize,
    transition: Option<scan::TransitionReport>,
    transition_error: Option<String>,
}

fn cmd_scan(cfg: &RunConfig) -> Result<i32, String> {
    let m = cfg.model().map_err(|e| e.to_string())?;
    let b = cfg.budgets();
    let rows =
        scan::scan_xi(&m, mother(cfg), &cfg.xi_grid.points(), &b).map_err(|e| e.to_string())?;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    let (transition, transition_error) =
        match scan::transition_from_scan(&m, mother(cfg), &rows, cfg.tol_xi, &b) {
            Some(Ok(t)) => (Some(t), None),
            Some(Err(e)) => (None, Some(e.to_string())),
            None => (None, None),
        };
    let csv = csv_file(cfg, "scan", "scan.csv", |w| write_scan_csv(&rows, w))?;
    let summary = ScanSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows: &rows,
        failures,
        transition: transition.clone(),
        transition_error: transition_error.clone(),
    };
    json_file(cfg, "scan_summary.json", &summary)?;
    println!(
        "wrote {} ({} rows, {failures} failed)",
        csv.display(),
        rows.len()
    );
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("xi = {}: {}", r.xi, r.error.as_deref().unwrap_or(""));
    }
    match (&transition, &transition_error) {
        (Some(t), _) => println!("transition bracket [{:.6}, {:.6}]", t.xi_plus, t.xi_minus),
        (None, Some(e)) => eprintln!("transition bracket failed: {e}"),
        (None, None) => println!("no sign change on the grid"),
    }
    Ok(if failures > 0 || transition_error.is_some() {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct BracketOut {
    config_hash: String,
    seed: u64,
    report: scan::TransitionReport,
}

fn cmd_bracket(cfg: &RunConfig) -> Result<i32, String> {
    let m = cfg.model().map_err(|e| e.to_string())?;
    let report = scan::bracket_transition(
        &m,
        mother(cfg),
        cfg.xi_lo,
        cfg.xi_hi,
        cfg.tol_xi,
        &cfg.budgets(),
    )
    .map_err(|e| e.to_string())?;
    println!(
        "xi_plus = {:.16e}\nxi_minus = {:.16e}\n{}",
        report.xi_plus, report.xi_minus, report.confidence_note
    );
    json_file(
        cfg,
        "bracket.json",
        &BracketOut {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            report,
        },
    )?;
    Ok(EXIT_OK)
}

fn cmd_zeroset(cfg: &RunConfig) -> Result<i32, String> {
    let rows = zero_set_sweep(&cfg.sweep()).map_err(|e| e.to_string())?;
    let bad = rows
        .iter()
        .filter(|r| !r.certified || r.s_star.width() > cfg.width_tol)
        .count();
    let path = csv_file(cfg, "zeroset", "zeroset.csv", |w| {
        write_zeroset_csv(&rows, w)
    })?;
    println!(
        "wrote {} ({} points, {bad} not certified)",
        path.display(),
        rows.len()
    );
    Ok(if bad > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_stationary(cfg: &RunConfig) -> Result<i32, String> {
    let m = cfg.model().map_err(|e| e.to_string())?;
    let k = ScaledKernel::new(mother(cfg), cfg.xi).map_err(|e| e.to_string())?;
    let op = build_ulam(&m, cfg.n_cells).map_err(|e| e.to_string())?;
    let res =
        stationary_density(&op, &k, cfg.stationary_tol, cfg.max_iter).map_err(|e| e.to_string())?;
    let path = csv_file(cfg, "stationary", "stationary.csv", |w| {
        res.density.write_csv(w)
    })?;
    println!(
        "wrote {} ({} iterations, residual {:e}, gap {:.4})",
        path.display(),
        res.iterations,
        res.residual,
        res.spectral_gap
    );
    Ok(EXIT_OK)
}

/// `x = -1 + k/1024` for `k = 0..=2048` without `x = 0`.
pub fn mapplot_points() -> impl Iterator<Item = f64> {
    (0..=2048u32)
        .filter(|&k| k != 1024)
        .map(|k| -1.0 + k as f64 / 1024.0)
}

fn cmd_mapplot(cfg: &RunConfig) -> Result<i32, String> {
    let m = cfg.model().map_err(|e| e.to_string())?;
    let path = csv_file(cfg, "mapplot", "mapplot.csv", |w| {
        writeln!(w, "x,T(x)")?;
        for x in mapplot_points() {
            let t = m.t(x).expect("x = 0 is excluded");
            writeln!(w, "{x:.16e},{t:.16e}")?;
        }
        Ok(())
    })?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig) -> Result<i32, String> {
    let m = cfg.model().map_err(|e| e.to_string())?;
    let b = cfg.budgets();
    if b.n_steps < nio_core::cocycle::MIN_QR_STEPS {
        return Err(format!(
            "verify needs n_steps >= {}",
            nio_core::cocycle::MIN_QR_STEPS
        ));
    }
    let rows =
        scan::verify_max_formula(&m, mother(cfg), &cfg.verify_xi, &b).map_err(|e| e.to_string())?;
    let path = csv_file(cfg, "verify", "verify.csv", |w| write_verify_csv(&rows, w))?;
    println!(
        "{:>10} {:>12} {:>12} {:>10} {:>6} {:>10}",
        "xi", "chi1_qr", "max", "diff", "pass", "sum_res"
    );
    for r in &rows {
        println!(
            "{:>10.4} {:>12.6} {:>12.6} {:>10.2e} {:>6} {:>10.1e}",
            r.xi,
            r.chi1_qr,
            r.max_value,
            r.discrepancy,
            if r.pass && r.sum_pass { "ok" } else { "FAIL" },
            r.sum_residual
        );
    }
    println!("wrote {}", path.display());
    Ok(if rows.iter().all(|r| r.pass && r.sum_pass) {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    })
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(&cli, std::env::var("NIO_SEED").ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
        eprintln!(
            "error: cannot create output directory {}: {e}",
            cfg.out_dir.display()
        );
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match &cli.cmd {
        Cmd::Scan { .. } => cmd_scan(&cfg),
        Cmd::Bracket { .. } => cmd_bracket(&cfg),
        Cmd::Zeroset { .. } => cmd_zeroset(&cfg),
        Cmd::Stationary { .. } => cmd_stationary(&cfg),
        Cmd::Mapplot => cmd_mapplot(&cfg),
        Cmd::Verify { .. } => cmd_verify(&cfg),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARTIAL
        }
    }
}
