//! Noise-amplitude scans of the base, fiber and top exponents, bracketing
//! of the sign change of the top exponent, and the max-formula check
//! against the QR spectrum.

use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{
    derive_seed, orbit_summary, LyapEstimate, OrbitConfig, SpectrumEstimate, MIN_QR_STEPS,
};
use crate::dynamics::LorenzSkewProduct;
use crate::error::{NioError, Result};
use crate::noise::{NoiseKernel, ScaledKernel};
use crate::transfer::{
    base_lyapunov_from_density, build_ulam, stationary_with, AnnealedOperator, StationaryOptions,
    UlamOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Both,
    UlamOnly,
    McOnly,
}

/// Work limits shared by scans, bracketing and verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budgets {
    pub n_steps: u64,
    pub n_burnin: u64,
    pub n_cells: usize,
    pub master_seed: u64,
    pub stationary: StationaryOptions,
    /// QR spectrum per row; skipped when `n_steps` is below the QR minimum.
    pub with_qr: bool,
    pub mode: ScanMode,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            n_steps: 1_000_000,
            n_burnin: crate::cocycle::DEFAULT_BURNIN,
            n_cells: 4096,
            master_seed: 0,
            stationary: StationaryOptions::default(),
            with_qr: true,
            mode: ScanMode::Both,
        }
    }
}

impl Budgets {
    fn orbit(&self, stream: u64) -> OrbitConfig {
        OrbitConfig {
            n_burnin: self.n_burnin,
            ..OrbitConfig::new(derive_seed(self.master_seed, stream), self.n_steps)
        }
    }

    fn uses_mc(&self) -> bool {
        self.mode != ScanMode::UlamOnly
    }

    fn uses_ulam(&self) -> bool {
        self.mode != ScanMode::McOnly
    }
}

/// 40 log-spaced amplitudes in `[1e-2, 1e2]` preceded by `0`.
pub fn default_xi_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 40, true)
}

pub fn log_grid(lo: f64, hi: f64, n: usize, with_zero: bool) -> Vec<f64> {
    let mut g = Vec::with_capacity(n + 1);
    if with_zero {
        g.push(0.0);
    }
    let (l0, l1) = (lo.log10(), hi.log10());
    for i in 0..n {
        let t = if n == 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        };
        g.push(if i == n - 1 {
            hi
        } else {
            10f64.powf(l0 + t * (l1 - l0))
        });
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub xi: f64,
    pub lambda_base_mc: Option<LyapEstimate>,
    pub lambda_base_ulam: Option<f64>,
    pub fiber_chi1: Option<LyapEstimate>,
    pub top_lambda: Option<LyapEstimate>,
    pub chi_qr: Option<SpectrumEstimate>,
    /// `|λ_base(MC) - λ_base(Ulam)|` when both are present.
    pub method_agreement: Option<f64>,
    pub error: Option<String>,
}

impl ScanRow {
    fn empty(xi: f64) -> Self {
        ScanRow {
            xi,
            lambda_base_mc: None,
            lambda_base_ulam: None,
            fiber_chi1: None,
            top_lambda: None,
            chi_qr: None,
            method_agreement: None,
            error: None,
        }
    }

    /// Best available estimate of the top exponent: the Ulam base value when
    /// present (the fiber exponent is always below `-r log 2`), else MC.
    pub fn lambda_estimate(&self) -> Option<f64> {
        match (self.lambda_base_ulam, &self.top_lambda) {
            (Some(u), Some(t)) => Some(u.max(t.value)),
            (Some(u), None) => Some(u),
            (None, Some(t)) => Some(t.value),
            (None, None) => None,
        }
    }
}

fn kernel(mother: NoiseKernel, xi: f64) -> Result<ScaledKernel> {
    ScaledKernel::new(mother, xi)
}

fn ulam_lambda(
    m: &LorenzSkewProduct,
    op: &UlamOperator,
    k: &ScaledKernel,
    b: &Budgets,
) -> Result<f64> {
    if k.xi() == 0.0 {
        return Err(NioError::Precondition("no Ulam value at xi = 0".into()));
    }
    let res = stationary_with(&AnnealedOperator::new(op, k)?, b.stationary)?;
    Ok(base_lyapunov_from_density(m, &res.density))
}

fn scan_point(
    m: &LorenzSkewProduct,
    op: Option<&UlamOperator>,
    mother: NoiseKernel,
    xi: f64,
    stream: u64,
    b: &Budgets,
) -> ScanRow {
    let mut row = ScanRow::empty(xi);
    let k = match kernel(mother, xi) {
        Ok(k) => k,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let mut errors = Vec::new();
    if let Some(op) = op.filter(|_| xi > 0.0) {
        match ulam_lambda(m, op, &k, b) {
            Ok(v) => row.lambda_base_ulam = Some(v),
            Err(e) => errors.push(format!("ulam: {e}")),
        }
    }
    if b.uses_mc() {
        let qr = b.with_qr && b.n_steps >= MIN_QR_STEPS;
        match orbit_summary(m, &k, &b.orbit(stream), qr) {
            Ok(s) => {
                row.lambda_base_mc = Some(s.base);
                row.fiber_chi1 = Some(s.fiber.chi1);
                row.top_lambda = Some(s.top.estimate);
                row.chi_qr = s.spectrum;
                row.method_agreement = row.lambda_base_ulam.map(|u| (u - s.base.value).abs());
            }
            Err(e) => errors.push(format!("mc: {e}")),
        }
    }
    if !errors.is_empty() {
        row.error = Some(errors.join("; "));
    }
    row
}

/// Evaluates every grid amplitude; per-point failures are recorded in the
/// row. Orbit seeds depend only on the master seed and the grid index.
pub fn scan_xi(
    m: &LorenzSkewProduct,
    mother: NoiseKernel,
    xi_grid: &[f64],
    b: &Budgets,
) -> Result<Vec<ScanRow>> {
    m.validate()?;
    if xi_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(NioError::invalid(
            "xi_grid",
            "amplitudes must be finite and nonnegative",
        ));
    }
    if xi_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(NioError::invalid("xi_grid", "amplitudes must be ascending"));
    }
    if xi_grid.is_empty() {
        return Ok(Vec::new());
    }
    let op = if b.uses_ulam() && xi_grid.iter().any(|&x| x > 0.0) {
        Some(build_ulam(m, b.n_cells)?)
    } else {
        None
    };
    Ok(xi_grid
        .par_iter()
        .enumerate()
        .map(|(i, &xi)| scan_point(m, op.as_ref(), mother, xi, i as u64, b))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketMethod {
    UlamBisection,
    McSign,
}

/// An empirical sign-change bracket `[ξ₊, ξ₋]` of the top exponent. It is a
/// single bracket: further sign changes outside it are not excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionReport {
    pub xi_plus: f64,
    pub xi_minus: f64,
    pub bracket_method: BracketMethod,
    pub confidence_note: String,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub mc_plus: Option<LyapEstimate>,
    pub mc_minus: Option<LyapEstimate>,
    pub bisection_steps: usize,
}

impl TransitionReport {
    pub fn width(&self) -> f64 {
        self.xi_minus - self.xi_plus
    }
}

pub const DEFAULT_TOL_XI: f64 = 1e-2;

// Seed streams for the bracket cross-checks, disjoint from scan indices.
const STREAM_PLUS: u64 = 1 << 40;
const STREAM_MINUS: u64 = (1 << 40) + 1;

/// Bisects on the deterministic Ulam base exponent between an amplitude
/// with positive and one with negative exponent, then cross-checks both
/// ends by Monte Carlo.
pub fn bracket_transition(
    m: &LorenzSkewProduct,
    mother: NoiseKernel,
    xi_lo: f64,
    xi_hi: f64,
    tol_xi: f64,
    b: &Budgets,
) -> Result<TransitionReport> {
    m.validate()?;
    if !(xi_lo >= 0.0 && xi_lo < xi_hi && xi_hi.is_finite()) {
        return Err(NioError::invalid(
            "xi_range",
            format!("need 0 <= lo < hi, got [{xi_lo}, {xi_hi}]"),
        ));
    }
    if !(tol_xi > 0.0) {
        return Err(NioError::invalid("tol_xi", "must be positive"));
    }
    let op = build_ulam(m, b.n_cells)?;
    let lambda_at = |xi: f64, stream: u64| -> Result<(f64, Option<LyapEstimate>)> {
        let k = kernel(mother, xi)?;
        if xi == 0.0 {
            let s = orbit_summary(m, &k, &b.orbit(stream), false)?;
            Ok((s.top.estimate.value, Some(s.top.estimate)))
        } else {
            Ok((ulam_lambda(m, &op, &k, b)?, None))
        }
    };

    let (mut l_lo, mut mc_lo) = lambda_at(xi_lo, STREAM_PLUS)?;
    let (mut l_hi, _) = lambda_at(xi_hi, STREAM_MINUS)?;
    if !(l_lo > 0.0) {
        return Err(NioError::Precondition(format!(
            "exponent {l_lo:.6} at xi = {xi_lo} is not positive"
        )));
    }
    if !(l_hi < 0.0) {
        return Err(NioError::Precondition(format!(
            "exponent {l_hi:.6} at xi = {xi_hi} is not negative"
        )));
    }

    let (mut lo, mut hi) = (xi_lo, xi_hi);
    let mut steps = 0;
    while hi - lo > tol_xi {
        let mid = 0.5 * (lo + hi);
        let (l, _) = lambda_at(mid, 0)?;
        if l > 0.0 {
            lo = mid;
            l_lo = l;
            mc_lo = None;
        } else {
            hi = mid;
            l_hi = l;
        }
        steps += 1;
    }

    let mut notes = vec![format!(
        "single empirical sign-change bracket from Ulam bisection on {} cells; other sign changes are not excluded",
        b.n_cells
    )];
    let mut cross = |xi: f64,
                     ulam: f64,
                     stream: u64,
                     reuse: Option<LyapEstimate>|
     -> Result<Option<LyapEstimate>> {
        if !b.uses_mc() {
            return Ok(None);
        }
        let est = match reuse {
            Some(e) => e,
            None => {
                orbit_summary(m, &kernel(mother, xi)?, &b.orbit(stream), false)?
                    .top
                    .estimate
            }
        };
        if xi > 0.0 && (est.value - ulam).abs() > 3.0 * est.stderr {
            notes.push(format!(
                "warning: Monte Carlo {:.6} ± {:.2e} at xi = {xi} differs from Ulam {ulam:.6} by more than 3 stderr",
                est.value, est.stderr
            ));
        }
        Ok(Some(est))
    };
    let mc_plus = cross(lo, l_lo, STREAM_PLUS, mc_lo)?;
    let mc_minus = cross(hi, l_hi, STREAM_MINUS, None)?;

    Ok(TransitionReport {
        xi_plus: lo,
        xi_minus: hi,
        bracket_method: BracketMethod::UlamBisection,
        confidence_note: notes.join("; "),
        lambda_plus: l_lo,
        lambda_minus: l_hi,
        mc_plus,
        mc_minus,
        bisection_steps: steps,
    })
}

/// Brackets the first positive-to-negative sign change found along scan rows.
pub fn transition_from_scan(
    m: &LorenzSkewProduct,
    mother: NoiseKernel,
    rows: &[ScanRow],
    tol_xi: f64,
    b: &Budgets,
) -> Option<Result<TransitionReport>> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.lambda_estimate().map(|l| (r.xi, l)))
        .collect();
    let w = pts.windows(2).find(|w| w[0].1 > 0.0 && w[1].1 < 0.0)?;
    if !b.uses_ulam() {
        // no deterministic exponent to bisect on: report the grid cell
        return Some(Ok(TransitionReport {
            xi_plus: w[0].0,
            xi_minus: w[1].0,
            bracket_method: BracketMethod::McSign,
            confidence_note: "grid-resolution bracket from Monte Carlo signs only".into(),
            lambda_plus: w[0].1,
            lambda_minus: w[1].1,
            mc_plus: None,
            mc_minus: None,
            bisection_steps: 0,
        }));
    }
    Some(bracket_transition(m, mother, w[0].0, w[1].0, tol_xi, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub xi: f64,
    pub chi1_qr: f64,
    pub chi1_qr_stderr: f64,
    pub max_value: f64,
    pub max_stderr: f64,
    pub discrepancy: f64,
    pub pass: bool,
    pub sum_residual: f64,
    pub sum_pass: bool,
}

pub const SUM_IDENTITY_TOL: f64 = 1e-10;

/// Compares the QR top exponent with `max(λ_base, χ̂₁)` from the same orbit
/// and checks `χ₁ + χ₂ = λ_base + χ̂₁`.
pub fn verify_max_formula(
    m: &LorenzSkewProduct,
    mother: NoiseKernel,
    xi_list: &[f64],
    b: &Budgets,
) -> Result<Vec<VerifyRow>> {
    m.validate()?;
    if xi_list.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(NioError::invalid("xi_list", "amplitudes must be positive"));
    }
    xi_list
        .par_iter()
        .enumerate()
        .map(|(i, &xi)| {
            let s = orbit_summary(m, &kernel(mother, xi)?, &b.orbit(i as u64), true)?;
            let sp = s.spectrum.expect("QR enabled");
            let top = s.top.estimate;
            let discrepancy = (sp.chi[0] - top.value).abs();
            let sum_residual = (sp.sum() - s.log_det).abs();
            Ok(VerifyRow {
                xi,
                chi1_qr: sp.chi[0],
                chi1_qr_stderr: sp.stderr[0],
                max_value: top.value,
                max_stderr: top.stderr,
                discrepancy,
                pass: discrepancy <= 3.0 * (sp.stderr[0] + top.stderr),
                sum_residual,
                sum_pass: sum_residual < SUM_IDENTITY_TOL,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.16e}"))
}

/// Writes the scan CSV body (header line plus one line per row).
pub fn write_scan_csv<W: std::io::Write>(rows: &[ScanRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "xi,lambda_base_mc,stderr,lambda_base_ulam,fiber_chi1,stderr,top_lambda,chi1_qr,chi2_qr,agreement"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{},{},{},{},{},{},{},{},{}",
            r.xi,
            opt(r.lambda_base_mc.map(|e| e.value)),
            opt(r.lambda_base_mc.map(|e| e.stderr)),
            opt(r.lambda_base_ulam),
            opt(r.fiber_chi1.map(|e| e.value)),
            opt(r.fiber_chi1.map(|e| e.stderr)),
            opt(r.top_lambda.map(|e| e.value)),
            opt(r.chi_qr.map(|s| s.chi[0])),
            opt(r.chi_qr.map(|s| s.chi[1])),
            opt(r.method_agreement),
        )?;
    }
    Ok(())
}

pub fn write_verify_csv<W: std::io::Write>(rows: &[VerifyRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "xi,chi1_qr,stderr,max_formula,stderr,discrepancy,pass,sum_residual,sum_pass"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            r.xi,
            r.chi1_qr,
            r.chi1_qr_stderr,
            r.max_value,
            r.max_stderr,
            r.discrepancy,
            r.pass,
            r.sum_residual,
            r.sum_pass
        )?;
    }
    Ok(())
}
