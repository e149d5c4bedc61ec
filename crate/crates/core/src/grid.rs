use serde::Serialize;

use crate::error::{NioError, Result};

/// Piecewise-constant density on the uniform partition of `[-1, 1]` into
/// `n_cells` cells; `values[j]` is the density on cell `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(NioError::invalid("n_cells", "empty grid"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(NioError::Domain(format!("non-finite density value {v}")));
        }
        Ok(GridDensity { values })
    }

    /// The uniform probability density `1/2`.
    pub fn uniform(n_cells: usize) -> Self {
        GridDensity {
            values: vec![0.5; n_cells],
        }
    }

    pub fn zeros(n_cells: usize) -> Self {
        GridDensity {
            values: vec![0.0; n_cells],
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        GridDensity { values }
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        cell_width(self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell_bounds(&self, j: usize) -> (f64, f64) {
        cell_bounds(self.values.len(), j)
    }

    /// Total mass `Σ values · h` (the L¹ norm for nonnegative densities).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_width()
    }

    pub fn l1_distance(&self, other: &GridDensity) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(s * self.cell_width())
    }

    /// Rescales to unit mass; a zero density is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let m = self.mass();
        if m > 0.0 {
            let inv = 1.0 / m;
            self.values.iter_mut().for_each(|v| *v *= inv);
        }
        self
    }

    pub(crate) fn check_same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.n_cells() != other.n_cells() {
            return Err(NioError::Dimension {
                expected: self.n_cells(),
                actual: other.n_cells(),
            });
        }
        Ok(())
    }

    /// Writes the `cell_left,cell_right,density` CSV body.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cell_left,cell_right,density")?;
        for (j, v) in self.values.iter().enumerate() {
            let (l, r) = self.cell_bounds(j);
            writeln!(w, "{l:.16e},{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

#[inline]
pub fn cell_width(n_cells: usize) -> f64 {
    2.0 / n_cells as f64
}

/// Endpoints of cell `j`; exact for power-of-two grids.
#[inline]
pub fn cell_bounds(n_cells: usize, j: usize) -> (f64, f64) {
    let h = cell_width(n_cells);
    (-1.0 + j as f64 * h, -1.0 + (j + 1) as f64 * h)
}

pub(crate) fn check_power_of_two(n_cells: usize, min: usize) -> Result<()> {
    if n_cells < min || !n_cells.is_power_of_two() {
        return Err(NioError::invalid(
            "n_cells",
            format!("{n_cells} must be a power of two >= {min}"),
        ));
    }
    Ok(())
}
