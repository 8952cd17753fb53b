//! Uniform 1-D mesh, piecewise-constant fields and discrete norms.
//!
//! Cell `i` covers `[x_i - dx/2, x_i + dx/2)` with `x_i = x_min + (i + 1/2) dx`.
//! Faces are indexed so that cell `i` has left face `i` and right face `i + 1`;
//! a [`FaceField`] therefore has `n_cells + 1` entries. Outside the window the
//! solution is extended by zero.

use crate::error::{Error, Result};

/// Default number of midpoint sub-intervals per cell used by [`cell_average`].
pub const DEFAULT_QUAD_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_cells: usize,
    dx: f64,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(Error::config(format!(
                "degenerate domain [{x_min}, {x_max}]"
            )));
        }
        if n_cells < 2 {
            return Err(Error::config(format!(
                "n_cells must be at least 2, got {n_cells}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_cells,
            dx: (x_max - x_min) / n_cells as f64,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Cell center `x_i`. Negative or out-of-range indices give ghost centers.
    pub fn center(&self, i: isize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    /// Position of face `j` (the left face of cell `j`).
    pub fn face(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|i| self.center(i as isize))
    }

    /// Ratio `coarse.dx / self.dx` when `coarse` is an integral coarsening of
    /// `self` on the same window.
    pub fn refinement_ratio(&self, coarse: &Grid) -> Option<usize> {
        if self.x_min != coarse.x_min || self.x_max != coarse.x_max {
            return None;
        }
        if !self.n_cells.is_multiple_of(coarse.n_cells) {
            return None;
        }
        Some(self.n_cells / coarse.n_cells)
    }
}

fn check_values(values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::Input(format!(
            "expected {expected} values, got {}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "non-finite value {} at index {i}",
            values[i]
        )));
    }
    Ok(())
}

/// Cell averages at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid.n_cells())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn constant(grid: Grid, k: f64) -> Self {
        Self {
            grid,
            values: vec![k; grid.n_cells()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for fault injection and in-place construction. Callers
    /// are responsible for keeping the values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value with zero extension outside the window.
    pub fn get(&self, i: isize) -> f64 {
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        discrete_norm(self, kind)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain sum of the values (mass divided by dx).
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mass(&self) -> f64 {
        self.grid.dx() * self.sum()
    }
}

/// Values at the `n_cells + 1` faces; index `j` holds the value at face `j`,
/// which lies between cells `j - 1` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    values: Vec<f64>,
}

impl FaceField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid.n_cells() + 1)?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cell averages `(1/dx) * integral over C_i` by composite midpoint
/// quadrature with `quad_points` sub-intervals per cell.
pub fn cell_average<F>(f: F, grid: &Grid, quad_points: usize) -> Result<CellField>
where
    F: Fn(f64) -> f64,
{
    if quad_points == 0 {
        return Err(Error::config("quad_points must be at least 1"));
    }
    let dx = grid.dx();
    let h = dx / quad_points as f64;
    let mut values = Vec::with_capacity(grid.n_cells());
    for i in 0..grid.n_cells() {
        let left = grid.face(i);
        let mut acc = 0.0;
        for q in 0..quad_points {
            let x = left + (q as f64 + 0.5) * h;
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "initial data is not finite at x = {x}"
                )));
            }
            acc += v;
        }
        let mean = acc / quad_points as f64;
        values.push(mean);
    }
    Ok(CellField { grid: *grid, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    Linf,
    /// Total variation including the jumps to the zero extension at both ends.
    TotalVariation,
}

pub fn discrete_norm(field: &CellField, kind: NormKind) -> f64 {
    let v = field.values();
    match kind {
        NormKind::L1 => field.grid().dx() * v.iter().map(|x| x.abs()).sum::<f64>(),
        NormKind::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        NormKind::TotalVariation => total_variation(v),
    }
}

/// `sum |v[i+1] - v[i]|` over the sequence padded with a zero on each side.
pub fn total_variation(v: &[f64]) -> f64 {
    let Some((first, last)) = v.first().zip(v.last()) else {
        return 0.0;
    };
    let interior: f64 = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    first.abs() + interior + last.abs()
}
