//! Ulam discretisation of the transfer operator of `T`, the annealed
//! operator `L_ξ = ρ^ξ ∗̂ L_T`, its stationary density, and the base
//! Lyapunov exponent `∫ log|T'| f dx`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::LorenzSkewProduct;
use crate::error::{NioError, Result};
use crate::grid::{cell_bounds, cell_width, check_power_of_two};
use crate::noise::{PeriodicConvolution, ScaledKernel};

pub use crate::grid::GridDensity;

pub const MIN_CELLS: usize = 64;

/// Row-stochastic cell-to-cell transition matrix of `T` in CSR layout:
/// row `i` holds `Leb(A_i ∩ T⁻¹A_j) / Leb(A_i)` for every hit cell `j`.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    n_cells: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl UlamOperator {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .copied()
            .zip(self.vals[a..b].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Pushes a density forward: `g_j = Σ_i f_i P_ij`.
    pub fn push_forward(&self, f: &GridDensity) -> Result<GridDensity> {
        if f.n_cells() != self.n_cells {
            return Err(NioError::Dimension {
                expected: self.n_cells,
                actual: f.n_cells(),
            });
        }
        Ok(GridDensity::from_raw(self.push_slice(f.values())))
    }

    fn push_slice(&self, f: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_cells];
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            for (j, p) in self.row(i) {
                g[j] += fi * p;
            }
        }
        g
    }
}

/// Assembles the Ulam matrix of `T` on `n_cells` uniform cells.
///
/// Transition masses come from the branch inverses evaluated at grid
/// points; no quadrature is involved.
pub fn build_ulam(m: &LorenzSkewProduct, n_cells: usize) -> Result<UlamOperator> {
    m.validate()?;
    check_power_of_two(n_cells, MIN_CELLS)?;
    let half = n_cells / 2;
    // rows of the right half; the left half is the mirror image since T is odd
    let right: Vec<Vec<(usize, f64)>> = (half..n_cells)
        .into_par_iter()
        .map(|i| positive_branch_row(m, n_cells, i))
        .collect();

    let mut row_ptr = Vec::with_capacity(n_cells + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for i in 0..half {
        let mirror = &right[n_cells - 1 - i - half];
        for &(j, p) in mirror.iter().rev() {
            cols.push(n_cells - 1 - j);
            vals.push(p);
        }
        row_ptr.push(cols.len());
    }
    for row in &right {
        for &(j, p) in row {
            cols.push(j);
            vals.push(p);
        }
        row_ptr.push(cols.len());
    }
    Ok(UlamOperator {
        n_cells,
        row_ptr,
        cols,
        vals,
    })
}

// Cell i ⊂ [0, 1] under T(x) = a x^s - 1. In cell units the image
// coordinate is Y(x) = (T(x) + 1)/h = a x^s / h, so target cell k covers
// Y ∈ [k, k+1) and has preimage boundary x = (k h / a)^(1/s).
fn positive_branch_row(m: &LorenzSkewProduct, n: usize, i: usize) -> Vec<(usize, f64)> {
    let h = cell_width(n);
    let (u, v) = cell_bounds(n, i);
    let (a, s) = (m.a(), m.s());
    let y = |x: f64| a * x.powf(s) / h;
    let inv = |k: usize| ((k as f64 * h) / a).powf(1.0 / s).clamp(u, v);
    let (yu, yv) = (y(u), y(v));
    let k_lo = yu.floor() as usize;
    let k_hi = (yv.ceil() as usize).max(k_lo + 1).min(n);
    let width = v - u;
    let mut row = Vec::with_capacity(k_hi - k_lo);
    let mut left = u;
    for k in k_lo..k_hi {
        let right = if (k + 1) as f64 >= yv {
            v
        } else {
            inv(k + 1).max(left)
        };
        let len = right - left;
        if len > 0.0 {
            row.push((k.min(n - 1), len / width));
        }
        left = right;
    }
    row
}

/// `L_ξ = ρ^ξ ∗̂ L_T` with the convolution weights precomputed.
#[derive(Debug, Clone)]
pub struct AnnealedOperator<'a> {
    ulam: &'a UlamOperator,
    conv: PeriodicConvolution,
    xi: f64,
}

impl<'a> AnnealedOperator<'a> {
    pub fn new(ulam: &'a UlamOperator, kernel: &ScaledKernel) -> Result<Self> {
        Ok(AnnealedOperator {
            ulam,
            conv: PeriodicConvolution::new(kernel, ulam.n_cells())?,
            xi: kernel.xi(),
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn apply(&self, f: &GridDensity) -> Result<GridDensity> {
        if f.n_cells() != self.ulam.n_cells() {
            return Err(NioError::Dimension {
                expected: self.ulam.n_cells(),
                actual: f.n_cells(),
            });
        }
        Ok(GridDensity::from_raw(self.apply_slice(f.values())))
    }

    fn apply_slice(&self, f: &[f64]) -> Vec<f64> {
        self.conv.apply_slice(&self.ulam.push_slice(f))
    }
}

/// One application of `L_ξ`: transfer under `T`, then periodic convolution.
pub fn annealed_apply(op: &UlamOperator, k: &ScaledKernel, f: &GridDensity) -> Result<GridDensity> {
    AnnealedOperator::new(op, k)?.apply(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryResult {
    pub density: GridDensity,
    pub iterations: usize,
    /// L¹ distance between the last two iterates.
    pub residual: f64,
    /// `1 - |second eigenvalue|`, estimated from the residual decay.
    pub spectral_gap: f64,
}

impl StationaryResult {
    /// Mixing rate `-log(1 - gap)`.
    pub fn mixing_rate(&self) -> f64 {
        -(1.0 - self.spectral_gap).ln()
    }
}

const GAP_WINDOW: usize = 20;

/// Power iteration of `L_ξ` from the uniform density.
pub fn stationary_density(
    op: &UlamOperator,
    k: &ScaledKernel,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryResult> {
    if k.xi() <= 0.0 {
        return Err(NioError::Precondition(
            "stationary density needs xi > 0; use Monte Carlo orbits at xi = 0".into(),
        ));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(NioError::invalid(
            "tol",
            format!("tol = {tol}, max_iter = {max_iter}"),
        ));
    }
    let annealed = AnnealedOperator::new(op, k)?;
    stationary_with(&annealed, StationaryOptions { tol, max_iter })
}

pub fn stationary_with(
    op: &AnnealedOperator<'_>,
    opts: StationaryOptions,
) -> Result<StationaryResult> {
    let n = op.ulam.n_cells();
    let h = cell_width(n);
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * h;

    let mut prev2: Option<Vec<f64>> = None;
    let mut cur = vec![0.5; n];
    let mut residuals: Vec<f64> = Vec::new();
    for it in 1..=opts.max_iter {
        let mut next = op.apply_slice(&cur);
        let mass: f64 = next.iter().sum::<f64>() * h;
        if mass > 0.0 {
            next.iter_mut().for_each(|v| *v /= mass);
        }
        let res = l1(&next, &cur);
        residuals.push(res);
        if res < opts.tol {
            return Ok(finish(next, it, res, &residuals));
        }
        // period-two alternation: average the last two iterates
        if let Some(p2) = &prev2 {
            if it > 2 * GAP_WINDOW && l1(&next, p2) < opts.tol {
                let avg: Vec<f64> = next.iter().zip(&cur).map(|(a, b)| 0.5 * (a + b)).collect();
                let check = op.apply_slice(&avg);
                let res = l1(&check, &avg);
                if res < 2.0 * opts.tol {
                    return Ok(finish(avg, it, res, &residuals));
                }
            }
        }
        prev2 = Some(std::mem::replace(&mut cur, next));
    }
    Err(NioError::Convergence {
        iterations: opts.max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

fn finish(
    values: Vec<f64>,
    iterations: usize,
    residual: f64,
    residuals: &[f64],
) -> StationaryResult {
    StationaryResult {
        density: GridDensity::from_raw(values),
        iterations,
        residual,
        spectral_gap: gap_from_residuals(residuals),
    }
}

fn gap_from_residuals(res: &[f64]) -> f64 {
    let n = res.len();
    if n < 2 {
        return 1.0;
    }
    let last = res[n - 1];
    let span = (n - 1).min(GAP_WINDOW);
    let first = res[n - 1 - span];
    if !(first > 0.0) || !(last > 0.0) {
        return 1.0;
    }
    let q = (last / first).powf(1.0 / span as f64);
    (1.0 - q).clamp(f64::MIN_POSITIVE, 1.0)
}

// ∫_u^v log|x| dx for a cell not straddling 0, via x log x - x.
fn cell_log_integral(u: f64, v: f64) -> f64 {
    let (p, q) = if v <= 0.0 { (-v, -u) } else { (u, v) };
    let prim = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() - x };
    prim(q) - prim(p)
}

/// `∫ log|T'(x)| f(x) dx` with exact per-cell integration of `log|x|`.
pub fn base_lyapunov_from_density(m: &LorenzSkewProduct, f: &GridDensity) -> f64 {
    let n = f.n_cells();
    let constant = (m.a().ln() + m.s().ln()) * f.mass();
    let k = m.s() - 1.0;
    if k == 0.0 {
        return constant;
    }
    let weighted: f64 = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &fj)| fj != 0.0)
        .map(|(j, &fj)| {
            let (u, v) = cell_bounds(n, j);
            fj * cell_log_integral(u, v)
        })
        .sum();
    constant + k * weighted
}

/// Consecutive L¹ distances between stationary densities along an ascending
/// list of kernels: entry `i` is `(ξ_{i+1}, ‖f_{ξ_{i+1}} - f_{ξ_i}‖₁)`.
pub fn density_continuity_probe(
    m: &LorenzSkewProduct,
    kernels: &[ScaledKernel],
    n_cells: usize,
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    if kernels.windows(2).any(|w| w[1].xi() < w[0].xi()) {
        return Err(NioError::Precondition(
            "xi values must be sorted ascending".into(),
        ));
    }
    let ulam = build_ulam(m, n_cells)?;
    let densities: Vec<GridDensity> = kernels
        .par_iter()
        .map(|k| {
            stationary_density(&ulam, k, tol, StationaryOptions::default().max_iter)
                .map(|r| r.density)
        })
        .collect::<Result<_>>()?;
    kernels
        .windows(2)
        .zip(densities.windows(2))
        .map(|(k, d)| Ok((k[1].xi(), d[1].l1_distance(&d[0])?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{interior_variation, NoiseKernel};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine() -> LorenzSkewProduct {
        LorenzSkewProduct::with_base(2.0, 1.0).unwrap()
    }

    fn uniform(xi: f64) -> ScaledKernel {
        ScaledKernel::new(NoiseKernel::uniform(), xi).unwrap()
    }

    #[test]
    fn affine_map_rows_are_two_halves() {
        for n in [64, 256, 1024] {
            let op = build_ulam(&affine(), n).unwrap();
            for i in 0..n {
                let row: Vec<_> = op.row(i).collect();
                assert_eq!(row.len(), 2, "row {i}");
                assert!(row.iter().all(|&(_, p)| p == 0.5));
            }
            let g = op.push_forward(&GridDensity::uniform(n)).unwrap();
            assert!(g.values().iter().all(|&v| v == 0.5));
        }
    }

    // Independent oracle for the affine case: T(x) = 2x - 1 on the right
    // branch sends cell i' (counted from 0) onto cells 2i' and 2i'+1.
    #[test]
    fn affine_map_targets_match_geometry() {
        let n = 64;
        let op = build_ulam(&affine(), n).unwrap();
        for ip in 0..n / 2 {
            let cols: Vec<usize> = op.row(n / 2 + ip).map(|(j, _)| j).collect();
            assert_eq!(cols, vec![2 * ip, 2 * ip + 1]);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [64, 512, 4096] {
            for _ in 0..20 {
                let a = rng.random_range(0.3..=2.0);
                let s = rng.random_range(1.0..4.4);
                let op = build_ulam(&LorenzSkewProduct::with_base(a, s).unwrap(), n).unwrap();
                for i in 0..n {
                    assert!(
                        (op.row_sum(i) - 1.0).abs() < 1e-12,
                        "n={n} a={a} s={s} row {i}"
                    );
                    assert!(op.row(i).all(|(_, p)| (0.0..=1.0).contains(&p)));
                }
            }
        }
        let op = build_ulam(&LorenzSkewProduct::default(), 64).unwrap();
        for i in 0..64 {
            assert!((op.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cells_outside_the_range_receive_nothing() {
        let m = LorenzSkewProduct::with_base(1.0, 2.0).unwrap();
        let n = 128;
        let op = build_ulam(&m, n).unwrap();
        // range is (-1, 0] ∪ [0, 1): every cell is hit
        let mut hit = vec![false; n];
        for i in 0..n {
            for (j, _) in op.row(i) {
                hit[j] = true;
            }
        }
        assert!(hit.iter().all(|&h| h));

        let m = LorenzSkewProduct::with_base(0.5, 2.0).unwrap();
        let op = build_ulam(&m, n).unwrap();
        let mut hit = vec![false; n];
        for i in 0..n {
            for (j, _) in op.row(i) {
                hit[j] = true;
            }
        }
        // range (-1, -0.5] ∪ [0.5, 1): cells inside (-0.5, 0.5) are never hit
        for (j, &h) in hit.iter().enumerate() {
            let (l, r) = cell_bounds(n, j);
            if l >= -0.5 && r <= 0.5 {
                assert!(!h, "cell {j} [{l}, {r}] should be empty");
            } else {
                assert!(h);
            }
        }
    }

    #[test]
    fn invalid_grid_rejected() {
        let m = LorenzSkewProduct::default();
        assert!(build_ulam(&m, 32).is_err());
        assert!(build_ulam(&m, 100).is_err());
    }

    #[test]
    fn annealed_examples() {
        let op = build_ulam(&affine(), 256).unwrap();
        let g = annealed_apply(&op, &uniform(0.7), &GridDensity::uniform(256)).unwrap();
        assert!(g.values().iter().all(|&v| (v - 0.5).abs() < 1e-14));
        let z = annealed_apply(&op, &uniform(0.7), &GridDensity::zeros(256)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(annealed_apply(&op, &uniform(0.7), &GridDensity::zeros(128)).is_err());

        let lor = build_ulam(&LorenzSkewProduct::default(), 1024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = GridDensity::new((0..1024).map(|_| rng.random::<f64>()).collect())
            .unwrap()
            .normalized();
        for xi in [2.0, 5.0, 20.0] {
            let g = annealed_apply(&lor, &uniform(xi), &f).unwrap();
            assert!(interior_variation(&g) <= 2.0 / xi + 4.0 / 1024.0);
        }
    }

    #[test]
    fn affine_stationary_is_uniform_after_one_step() {
        let op = build_ulam(&affine(), 512).unwrap();
        for xi in [0.01, 0.3, 1.0, 4.0] {
            let r = stationary_density(&op, &uniform(xi), 1e-10, 1000).unwrap();
            assert_eq!(r.iterations, 1);
            assert!(r.density.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn stationary_is_fixed_point_with_positive_gap() {
        let m = LorenzSkewProduct::default();
        let op = build_ulam(&m, 1024).unwrap();
        for xi in [0.2, 1.0, 5.0] {
            let k = uniform(xi);
            let r = stationary_density(&op, &k, 1e-10, 100_000).unwrap();
            let again = annealed_apply(&op, &k, &r.density).unwrap();
            assert!(again.l1_distance(&r.density).unwrap() <= 2e-10);
            assert!(r.spectral_gap > 0.0 && r.spectral_gap <= 1.0);
            assert!((r.density.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_is_refused() {
        let op = build_ulam(&LorenzSkewProduct::default(), 64).unwrap();
        assert!(matches!(
            stationary_density(&op, &uniform(0.0), 1e-10, 10),
            Err(NioError::Precondition(_))
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let op = build_ulam(&LorenzSkewProduct::default(), 256).unwrap();
        match stationary_density(&op, &uniform(0.05), 1e-14, 3) {
            Err(NioError::Convergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn base_exponent_of_uniform_density() {
        let n = 4096;
        let u = GridDensity::uniform(n);
        let lor = LorenzSkewProduct::default();
        let closed = 2f64.ln() + 4f64.ln() + 1.0 - 4.0;
        assert!((closed - (-0.920_558_458_320_164_3)).abs() < 1e-15);
        assert!((base_lyapunov_from_density(&lor, &u) - closed).abs() < 1e-12);
        let flat = LorenzSkewProduct::with_base(1.0, 1.0).unwrap();
        assert_eq!(base_lyapunov_from_density(&flat, &u), 0.0);
        assert!((base_lyapunov_from_density(&affine(), &u) - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cell_log_integral_matches_quadrature() {
        for (u, v) in [
            (0.0, 0.125),
            (0.5, 0.625),
            (-0.25, -0.125),
            (-0.0078125, 0.0),
        ] {
            let n = 200_000;
            let h = (v - u) / n as f64;
            let quad: f64 = (0..n)
                .map(|i| (u + (i as f64 + 0.5) * h).abs().ln() * h)
                .sum();
            // midpoint rule converges slowly next to the log singularity at 0
            assert!((cell_log_integral(u, v) - quad).abs() < 1e-6, "[{u},{v}]");
        }
    }

    #[test]
    fn continuity_probe_examples() {
        let ks = [uniform(0.5), uniform(0.5), uniform(2.0)];
        let d = density_continuity_probe(&affine(), &ks, 256, 1e-10).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|&(_, dist)| dist < 1e-12));
        let lor = LorenzSkewProduct::default();
        let d = density_continuity_probe(&lor, &[uniform(1.0), uniform(1.0)], 256, 1e-10).unwrap();
        assert_eq!(d[0].1, 0.0);
        assert!(density_continuity_probe(&lor, &[uniform(2.0), uniform(1.0)], 256, 1e-10).is_err());
    }

    #[test]
    fn density_csv_layout() {
        let mut buf = Vec::new();
        GridDensity::uniform(64).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cell_left,cell_right,density"));
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(first, vec![-1.0, -1.0 + 2.0 / 64.0, 0.5]);
        assert_eq!(text.lines().count(), 65);
    }
}
