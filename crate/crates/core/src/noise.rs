//! Mother kernels on `[-1, 1]`, their ξ-rescalings, sampling, and the
//! period-2 convolution used by the annealed transfer operator.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NioError, Result};
use crate::grid::{cell_width, GridDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Density `1/2` on `[-1, 1]`.
    Uniform,
    /// Density `(3/4)(1 - x²)` on `[-1, 1]`.
    QuadraticBump,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Uniform => "uniform",
            KernelKind::QuadraticBump => "quadratic_bump",
        })
    }
}

impl FromStr for KernelKind {
    type Err = NioError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KernelKind::Uniform),
            "quadratic_bump" => Ok(KernelKind::QuadraticBump),
            other => Err(NioError::invalid(
                "kernel",
                format!("unknown kernel `{other}` (expected uniform | quadratic_bump)"),
            )),
        }
    }
}

/// A BV probability density supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseKernel {
    kind: KernelKind,
}

impl NoiseKernel {
    pub const fn new(kind: KernelKind) -> Self {
        NoiseKernel { kind }
    }

    pub const fn uniform() -> Self {
        Self::new(KernelKind::Uniform)
    }

    pub const fn quadratic_bump() -> Self {
        Self::new(KernelKind::QuadraticBump)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self.kind {
            KernelKind::Uniform => 0.5,
            KernelKind::QuadraticBump => 0.75 * (1.0 - x * x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        match self.kind {
            KernelKind::Uniform => 0.5 * (x + 1.0),
            KernelKind::QuadraticBump => (2.0 + 3.0 * x - x * x * x) / 4.0,
        }
    }

    /// Total variation over `[-1, 1]`, counting the jumps at the support edges.
    pub fn total_variation(&self) -> f64 {
        match self.kind {
            KernelKind::Uniform => 1.0,
            KernelKind::QuadraticBump => 1.5,
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match self.kind {
            KernelKind::Uniform => 2.0 * u - 1.0,
            KernelKind::QuadraticBump => bump_inverse_cdf(u),
        }
    }
}

// Safeguarded Newton on F(x) = (2 + 3x - x³)/4 - u, bracket [-1, 1].
fn bump_inverse_cdf(u: f64) -> f64 {
    const TOL: f64 = 1e-12;
    if u <= 0.0 {
        return -1.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let f = |x: f64| (2.0 + 3.0 * x - x * x * x) / 4.0 - u;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    // start from the symmetric-kernel median shifted linearly
    let mut x = 2.0 * u - 1.0;
    for _ in 0..100 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = 0.75 * (1.0 - x * x);
        let mut next = if d > 0.0 { x - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < TOL || hi - lo < TOL {
            return next;
        }
        x = next;
    }
    x
}

/// The rescaled kernel `ρ^ξ(x) = ρ(x/ξ)/ξ`, supported on `[-ξ, ξ]`.
///
/// `ξ = 0` is allowed and stands for the noiseless case (a point mass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledKernel {
    mother: NoiseKernel,
    xi: f64,
}

impl ScaledKernel {
    pub fn new(mother: NoiseKernel, xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(NioError::invalid(
                "xi",
                format!("{xi} is not a finite amplitude >= 0"),
            ));
        }
        Ok(ScaledKernel { mother, xi })
    }

    pub fn mother(&self) -> NoiseKernel {
        self.mother
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn density(&self, x: f64) -> f64 {
        if self.xi == 0.0 {
            return 0.0;
        }
        self.mother.density(x / self.xi) / self.xi
    }

    pub fn total_variation(&self) -> f64 {
        if self.xi == 0.0 {
            return f64::INFINITY;
        }
        self.mother.total_variation() / self.xi
    }

    /// Maps a uniform variate `u ∈ [0, 1)` to a noise sample.
    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        self.xi * self.mother.inverse_cdf(u)
    }
}

/// Free-function form of [`ScaledKernel::sample`].
pub fn sample(k: &ScaledKernel, u: f64) -> f64 {
    k.sample(u)
}

/// Circulant operator of cell-averaged periodic convolution with `ρ^ξ`.
///
/// `out[j] = Σ_d w_d · f[(j - d) mod N]`, where `w_d` is the exact
/// cell-average of the period-2 kernel mass between cells at offset `d`.
#[derive(Debug, Clone)]
pub struct PeriodicConvolution {
    n_cells: usize,
    weights: Vec<(usize, f64)>,
}

impl PeriodicConvolution {
    pub fn new(kernel: &ScaledKernel, n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(NioError::invalid("n_cells", "empty grid"));
        }
        if kernel.xi() == 0.0 {
            return Ok(PeriodicConvolution {
                n_cells,
                weights: vec![(0, 1.0)],
            });
        }
        let raw: Vec<f64> = (0..n_cells)
            .into_par_iter()
            .map(|d| offset_weight(kernel, n_cells, d))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
            .map(|(d, w)| (d, w / total))
            .collect();
        Ok(PeriodicConvolution { n_cells, weights })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Nonzero `(offset, weight)` pairs; weights sum to 1.
    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    pub fn apply(&self, f: &GridDensity) -> Result<GridDensity> {
        if f.n_cells() != self.n_cells {
            return Err(NioError::Dimension {
                expected: self.n_cells,
                actual: f.n_cells(),
            });
        }
        Ok(GridDensity::from_raw(self.apply_slice(f.values())))
    }

    pub(crate) fn apply_slice(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n_cells;
        if self.weights.len() == 1 && self.weights[0].0 == 0 {
            let w = self.weights[0].1;
            return f.iter().map(|v| v * w).collect();
        }
        let mut out = vec![0.0; n];
        out.par_chunks_mut(256).enumerate().for_each(|(c, chunk)| {
            let base = c * 256;
            for (i, o) in chunk.iter_mut().enumerate() {
                let j = base + i;
                let mut acc = 0.0;
                for &(d, w) in &self.weights {
                    let k = if j >= d { j - d } else { j + n - d };
                    acc += w * f[k];
                }
                *o = acc;
            }
        });
        out
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

// ∫_lo^hi ρ^ξ(c + τ)(h - |τ|) dτ on a piece where the integrand is a
// polynomial of degree <= 3; three-point Gauss is exact there.
fn tent_piece(kernel: &ScaledKernel, c: f64, h: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    GAUSS3
        .iter()
        .map(|&(node, w)| {
            let tau = mid + half * node;
            w * kernel.density(c + tau) * (h - tau.abs())
        })
        .sum::<f64>()
        * half
}

fn offset_weight(kernel: &ScaledKernel, n_cells: usize, d: usize) -> f64 {
    let h = cell_width(n_cells);
    let xi = kernel.xi();
    let dh = d as f64 * h;
    let i_min = ((-xi - h - dh) / 2.0).floor() as i64;
    let i_max = ((xi + h - dh) / 2.0).ceil() as i64;
    let mut acc = 0.0;
    for i in i_min..=i_max {
        let c = dh + 2.0 * i as f64;
        // kernel support in τ = t - c
        let s_lo = -xi - c;
        let s_hi = xi - c;
        if s_hi <= -h || s_lo >= h {
            continue;
        }
        acc += tent_piece(kernel, c, h, s_lo.max(-h), s_hi.min(0.0));
        acc += tent_piece(kernel, c, h, s_lo.max(0.0), s_hi.min(h));
    }
    acc / h
}

/// `ρ^ξ ∗̂ f` on the period-2 circle, cell-averaged onto the same grid.
pub fn periodic_convolve(k: &ScaledKernel, f: &GridDensity) -> Result<GridDensity> {
    PeriodicConvolution::new(k, f.n_cells())?.apply(f)
}

/// Variation of the compactly supported extension: interior jumps plus the
/// jumps from and to zero at `±1`.
pub fn discrete_variation(f: &GridDensity) -> f64 {
    let v = f.values();
    let first = v.first().map_or(0.0, |x| x.abs());
    let last = v.last().map_or(0.0, |x| x.abs());
    first + interior_variation(f) + last
}

/// Variation on `[-1, 1]` itself: `Σ |f_{j+1} - f_j|`.
pub fn interior_variation(f: &GridDensity) -> f64 {
    f.values().windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}
