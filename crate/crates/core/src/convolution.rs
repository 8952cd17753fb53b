//! Face-centred nonlocal terms.
//!
//! For face `j` (between cells `j - 1` and `j`) the nonlocal term is
//!
//! ```text
//! c_j = dx * sum_p mu((j - 1/2 - p) dx) * nu_bar(w_p),   w_p = (1 - theta) u_p + theta u_{p+1}
//! ```
//!
//! where `p` runs over the cells whose kernel offset lies inside the support
//! `(-eps, eps)` and cells outside the window contribute `u = 0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{CellField, FaceField};
use crate::model::{KernelSpec, NuBarSpec};

/// Default convex-combination weight for face values.
pub const DEFAULT_THETA_FACE: f64 = 0.5;

/// Grid size above which faces are computed in parallel.
const PARALLEL_THRESHOLD: usize = 4096;

pub fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::config(format!(
            "face weight theta must lie in [0, 1], got {theta}"
        )));
    }
    Ok(())
}

/// `(1 - theta) u_left + theta u_right`.
pub fn face_value(u_left: f64, u_right: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(face_value_unchecked(u_left, u_right, theta))
}

#[inline]
fn face_value_unchecked(u_left: f64, u_right: f64, theta: f64) -> f64 {
    if u_left == u_right {
        u_left
    } else {
        (1.0 - theta) * u_left + theta * u_right
    }
}

/// Kernel weights `mu((m - 1/2) dx)` for the offsets `m` with a nonzero value.
#[derive(Debug, Clone)]
pub struct KernelStencil {
    /// Smallest offset `m` in the support.
    pub first: i64,
    pub weights: Vec<f64>,
}

impl KernelStencil {
    pub fn new(kernel: &KernelSpec, dx: f64) -> Self {
        let eps = kernel.epsilon().unwrap_or(0.0);
        let reach = (eps / dx).ceil() as i64 + 1;
        let offsets: Vec<i64> = (-reach..=reach + 1)
            .filter(|&m| ((m as f64 - 0.5) * dx).abs() < eps)
            .collect();
        let first = offsets.first().copied().unwrap_or(0);
        let weights = offsets
            .iter()
            .map(|&m| kernel.mu((m as f64 - 0.5) * dx))
            .collect();
        Self { first, weights }
    }

    /// Number of lattice nodes inside the kernel support.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Nonlocal convolution at every face. Returns a warning message alongside
/// the result when the kernel support is under-resolved (`eps < dx`).
pub fn discrete_convolution(
    u: &CellField,
    kernel: &KernelSpec,
    nu_bar: &NuBarSpec,
    theta: f64,
) -> Result<(FaceField, Option<String>)> {
    check_theta(theta)?;
    let grid = *u.grid();
    let dx = grid.dx();
    let eps = kernel.epsilon().ok_or_else(|| {
        Error::config("discrete_convolution requires a bump kernel; use delta_convolution")
    })?;
    let warning = (eps < dx).then(|| {
        format!("kernel support eps = {eps} is below dx = {dx}; the kernel is under-resolved")
    });
    let stencil = KernelStencil::new(kernel, dx);
    let values = convolve_with_stencil(u, &stencil, nu_bar, theta);
    Ok((FaceField::new(grid, values)?, warning))
}

/// `nu_bar(w_p)` for `p = -1 ..= n - 1`, stored at index `p + 1`.
fn transformed_face_values(u: &CellField, nu_bar: &NuBarSpec, theta: f64) -> Vec<f64> {
    let n = u.grid().n_cells() as isize;
    (-1..n)
        .map(|p| nu_bar.eval(face_value_unchecked(u.get(p), u.get(p + 1), theta)))
        .collect()
}

pub(crate) fn convolve_with_stencil(
    u: &CellField,
    stencil: &KernelStencil,
    nu_bar: &NuBarSpec,
    theta: f64,
) -> Vec<f64> {
    let n = u.grid().n_cells();
    let dx = u.grid().dx();
    let g = transformed_face_values(u, nu_bar, theta);
    let last = stencil.first + stencil.weights.len() as i64 - 1;
    // face j, cell p: offset m = j - p, so p ranges over [j - last, j - first]
    let face = |j: usize| -> f64 {
        let j = j as i64;
        let p_lo = (j - last).max(-1);
        let p_hi = (j - stencil.first).min(n as i64 - 1);
        let mut acc = 0.0;
        for p in p_lo..=p_hi {
            let w = stencil.weights[(j - p - stencil.first) as usize];
            acc += w * g[(p + 1) as usize];
        }
        dx * acc
    };
    if n >= PARALLEL_THRESHOLD {
        (0..=n).into_par_iter().map(face).collect()
    } else {
        (0..=n).map(face).collect()
    }
}

/// Local limit: `c_j = nu_bar(w_{j-1})`, the transformed face value itself.
pub fn delta_convolution(u: &CellField, nu_bar: &NuBarSpec, theta: f64) -> Result<FaceField> {
    check_theta(theta)?;
    let grid = *u.grid();
    let n = grid.n_cells() as isize;
    let values = (0..=n)
        .map(|j| nu_bar.eval(face_value_unchecked(u.get(j - 1), u.get(j), theta)))
        .collect();
    FaceField::new(grid, values)
}

/// Faces for either kernel mode.
pub fn nonlocal_faces(
    u: &CellField,
    kernel: &KernelSpec,
    nu_bar: &NuBarSpec,
    theta: f64,
) -> Result<FaceField> {
    match kernel {
        KernelSpec::Delta => delta_convolution(u, nu_bar, theta),
        bump => discrete_convolution(u, bump, nu_bar, theta).map(|(c, _)| c),
    }
}
