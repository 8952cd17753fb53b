//! Problem definition: the flux `f`, the velocities `nu` and `nu_bar`, the
//! kernel `mu`, the rough coefficient `s`, and the operating bounds that feed
//! the CFL condition and the a-priori constants.
//!
//! The modelled equation is
//!
//! ```text
//! u_t + ( f(s(x) u) * nu( mu * nu_bar(u) ) )_x = 0
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{CellField, Grid, NormKind};

/// A user-supplied scalar function.
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Number of sample points used to estimate Lipschitz constants and sup
/// norms of user-supplied functions.
pub const SAMPLE_POINTS: usize = 4096;

/// Multiplier applied to sampled estimates so the CFL stays conservative.
pub const SAMPLE_SAFETY: f64 = 1.05;

const ZERO_TOL: f64 = 1e-14;

fn sampled_lipschitz(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let h = (hi - lo) / (SAMPLE_POINTS - 1) as f64;
    let mut prev = f(lo);
    let mut lip = 0.0f64;
    for k in 1..SAMPLE_POINTS {
        let x = lo + k as f64 * h;
        let v = f(x);
        lip = lip.max((v - prev).abs() / h);
        prev = v;
    }
    SAMPLE_SAFETY * lip
}

fn sampled_sup(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = if hi > lo { SAMPLE_POINTS } else { 1 };
    let h = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let sup = (0..n).map(|k| f(lo + k as f64 * h).abs()).fold(0.0, f64::max);
    SAMPLE_SAFETY * sup
}

/// Sampled sup of `|g'|` where `g` is approximated by central differences.
fn sampled_derivative_sup(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, order: u32) -> f64 {
    let h = ((hi - lo).abs().max(1.0)) * 1e-4;
    let d = |x: f64| -> f64 {
        match order {
            1 => (f(x + h) - f(x - h)) / (2.0 * h),
            _ => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
        }
    };
    sampled_sup(&d, lo, hi)
}

/// The local flux `f`, evaluated in the transformed variable `beta = s u`.
#[derive(Clone)]
pub enum FluxSpec {
    /// `f(beta) = beta`
    Linear,
    /// `f(beta) = beta (1 - beta)`
    Lwr,
    Custom { name: String, f: RealFn },
}

impl fmt::Debug for FluxSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.write_str(&self.name())
    }
}

impl FluxSpec {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FluxSpec::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FluxSpec::Linear => "linear".into(),
            FluxSpec::Lwr => "lwr".into(),
            FluxSpec::Custom { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn eval(&self, beta: f64) -> f64 {
        match self {
            FluxSpec::Linear => beta,
            FluxSpec::Lwr => beta * (1.0 - beta),
            FluxSpec::Custom { f, .. } => f(beta),
        }
    }

    /// Lipschitz constant of `f` on `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64) -> f64 {
        match self {
            FluxSpec::Linear => 1.0,
            FluxSpec::Lwr => f64::max((1.0 - 2.0 * lo).abs(), (1.0 - 2.0 * hi).abs()),
            FluxSpec::Custom { f, .. } => {
                if !hi.is_finite() {
                    return f64::INFINITY;
                }
                sampled_lipschitz(f.as_ref(), lo, hi)
            }
        }
    }

    /// Known roots of `f`.
    pub fn zeros(&self) -> Vec<f64> {
        match self {
            FluxSpec::Linear => vec![0.0],
            FluxSpec::Lwr => vec![0.0, 1.0],
            FluxSpec::Custom { f, .. } => [0.0, 1.0]
                .into_iter()
                .filter(|&z| f(z).abs() <= ZERO_TOL)
                .collect(),
        }
    }

    /// `f(0) = f(1) = 0`, the flux condition of the invariant-region principle.
    pub fn vanishes_at_zero_and_one(&self) -> bool {
        self.eval(0.0).abs() <= ZERO_TOL && self.eval(1.0).abs() <= ZERO_TOL
    }

    /// Godunov flux of the local problem `beta_t + f(beta)_x = 0`: the minimum
    /// of `f` over `[a, b]` when `a <= b`, the maximum over `[b, a]` otherwise.
    pub fn godunov(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return self.eval(a);
        }
        match self {
            // increasing flux: upwind from the left
            FluxSpec::Linear => a,
            FluxSpec::Lwr => {
                let fa = self.eval(a);
                let fb = self.eval(b);
                if a < b {
                    fa.min(fb)
                } else if b <= 0.5 && 0.5 <= a {
                    0.25
                } else {
                    fa.max(fb)
                }
            }
            FluxSpec::Custom { f, .. } => sampled_extremum(f.as_ref(), a, b),
        }
    }
}

/// Extremum of a general `f` on the interval spanned by `a` and `b`: sample 129
/// points, then refine around the best sample by golden-section search.
fn sampled_extremum(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const SAMPLES: usize = 129;
    let minimize = a < b;
    let (lo, hi) = if minimize { (a, b) } else { (b, a) };
    let better = |x: f64, y: f64| if minimize { x < y } else { x > y };
    let h = (hi - lo) / (SAMPLES - 1) as f64;
    let mut best_k = 0;
    let mut best = f(lo);
    for k in 1..SAMPLES {
        let v = f(lo + k as f64 * h);
        if better(v, best) {
            best = v;
            best_k = k;
        }
    }
    let mut left = lo + best_k.saturating_sub(1) as f64 * h;
    let mut right = (lo + (best_k + 1) as f64 * h).min(hi);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = right - g * (right - left);
        let x2 = left + g * (right - left);
        if better(f(x1), f(x2)) {
            right = x2;
        } else {
            left = x1;
        }
    }
    let refined = f(0.5 * (left + right));
    let ends = if minimize { f(a).min(f(b)) } else { f(a).max(f(b)) };
    [best, refined, ends]
        .into_iter()
        .fold(best, |acc, v| if better(v, acc) { v } else { acc })
}

/// The outer velocity `nu`, applied to the convolution value.
#[derive(Clone)]
pub enum VelocitySpec {
    /// `nu(a) = 1 - a`
    Affine,
    Custom { name: String, nu: RealFn },
}

impl fmt::Debug for VelocitySpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.write_str(&self.name())
    }
}

impl VelocitySpec {
    pub fn custom(name: impl Into<String>, nu: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        VelocitySpec::Custom {
            name: name.into(),
            nu: Arc::new(nu),
        }
    }

    pub fn name(&self) -> String {
        match self {
            VelocitySpec::Affine => "affine".into(),
            VelocitySpec::Custom { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn eval(&self, c: f64) -> f64 {
        match self {
            VelocitySpec::Affine => 1.0 - c,
            VelocitySpec::Custom { nu, .. } => nu(c),
        }
    }

    /// `(sup |nu|, sup |nu'|, Lip(nu'))` over `[lo, hi]`.
    pub fn norms_on(&self, lo: f64, hi: f64) -> (f64, f64, f64) {
        match self {
            VelocitySpec::Affine => (f64::max((1.0 - lo).abs(), (1.0 - hi).abs()), 1.0, 0.0),
            VelocitySpec::Custom { nu, .. } => {
                let f = nu.as_ref();
                (
                    sampled_sup(f, lo, hi),
                    sampled_derivative_sup(f, lo, hi, 1),
                    sampled_derivative_sup(f, lo, hi, 2),
                )
            }
        }
    }
}

/// The inner velocity `nu_bar`, applied to the density before convolution.
#[derive(Clone)]
pub enum NuBarSpec {
    Identity,
    Custom { name: String, nu_bar: RealFn },
}

impl fmt::Debug for NuBarSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.write_str(&self.name())
    }
}

impl NuBarSpec {
    pub fn custom(name: impl Into<String>, nu_bar: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        NuBarSpec::Custom {
            name: name.into(),
            nu_bar: Arc::new(nu_bar),
        }
    }

    pub fn name(&self) -> String {
        match self {
            NuBarSpec::Identity => "identity".into(),
            NuBarSpec::Custom { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            NuBarSpec::Identity => u,
            NuBarSpec::Custom { nu_bar, .. } => nu_bar(u),
        }
    }

    /// `sup |nu_bar'|` over `[lo, hi]`.
    pub fn prime_sup_on(&self, lo: f64, hi: f64) -> f64 {
        match self {
            NuBarSpec::Identity => 1.0,
            NuBarSpec::Custom { nu_bar, .. } => {
                if !hi.is_finite() {
                    return f64::INFINITY;
                }
                sampled_lipschitz(nu_bar.as_ref(), lo, hi)
            }
        }
    }
}

/// `L = 35 / (32 eps^7)`, the normalization of `L (eps^2 - x^2)^3` on `(-eps, eps)`.
pub fn kernel_normalization(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!(
            "kernel support must be positive, got {epsilon}"
        )));
    }
    Ok(35.0 / (32.0 * epsilon.powi(7)))
}

/// Convolution kernel: the compactly supported bump or the local (delta) limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Bump { epsilon: f64, normalization: f64 },
    Delta,
}

impl KernelSpec {
    pub fn bump(epsilon: f64) -> Result<Self> {
        Ok(KernelSpec::Bump {
            epsilon,
            normalization: kernel_normalization(epsilon)?,
        })
    }

    pub fn is_local(&self) -> bool {
        matches!(self, KernelSpec::Delta)
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            KernelSpec::Bump { epsilon, .. } => Some(epsilon),
            KernelSpec::Delta => None,
        }
    }

    /// `mu(x)`; zero for the delta kernel, which has no pointwise density.
    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        match *self {
            KernelSpec::Bump {
                epsilon,
                normalization,
            } => {
                if x.abs() < epsilon {
                    let w = epsilon * epsilon - x * x;
                    normalization * w * w * w
                } else {
                    0.0
                }
            }
            KernelSpec::Delta => 0.0,
        }
    }

    /// `||mu||_inf = L eps^6`.
    pub fn mu_sup(&self) -> f64 {
        match *self {
            KernelSpec::Bump {
                epsilon,
                normalization,
            } => normalization * epsilon.powi(6),
            KernelSpec::Delta => f64::INFINITY,
        }
    }

    /// `||mu'||_inf`: `|mu'| = 6 L |x| (eps^2 - x^2)^2` peaks at `x^2 = eps^2 / 5`.
    pub fn mu_prime_sup(&self) -> f64 {
        match *self {
            KernelSpec::Bump {
                epsilon,
                normalization,
            } => 6.0 * normalization * 16.0 * epsilon.powi(5) / (25.0 * 5f64.sqrt()),
            KernelSpec::Delta => f64::INFINITY,
        }
    }

    /// `||mu''||_inf`: `mu'' = -6 L (eps^2 - x^2)(eps^2 - 5 x^2)` peaks at `x = 0`.
    pub fn mu_second_sup(&self) -> f64 {
        match *self {
            KernelSpec::Bump {
                epsilon,
                normalization,
            } => 6.0 * normalization * epsilon.powi(4),
            KernelSpec::Delta => f64::INFINITY,
        }
    }

    /// Discrete kernel mass `dx * sum_m mu((m - 1/2) dx)` on the face-offset
    /// lattice used by the convolution.
    pub fn discrete_mass(&self, dx: f64) -> f64 {
        match *self {
            KernelSpec::Bump { epsilon, .. } => {
                let reach = (epsilon / dx).ceil() as i64 + 1;
                dx * (-reach..=reach + 1)
                    .map(|m| self.mu((m as f64 - 0.5) * dx))
                    .sum::<f64>()
            }
            KernelSpec::Delta => 1.0,
        }
    }
}

/// Piecewise-constant coefficient with finitely many breakpoints.
///
/// `values[k]` holds on `[breakpoints[k-1], breakpoints[k])`, with
/// `values[0]` on the left tail and `values[last]` on the right tail.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughCoefficient {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    s_inf: f64,
    s_sup: f64,
    bv_seminorm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometricKind {
    /// `a_n = 3 (1 - 0.8^n)`, non-decreasing `s`.
    Monotone,
    /// `a_n = (1 - (-0.8)^n) / 12 + 1`, non-monotone `s`.
    Alternating,
}

/// Right end of the rough region; `s = 1` beyond it.
const GEOMETRIC_PLATEAU: f64 = 3.0;

impl RoughCoefficient {
    pub fn from_pieces(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::config(format!(
                "coefficient needs {} values for {} breakpoints, got {}",
                breakpoints.len() + 1,
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("coefficient breakpoints must be strictly increasing"));
        }
        if values.iter().chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::config("coefficient data must be finite"));
        }
        let s_inf = values.iter().copied().fold(f64::INFINITY, f64::min);
        let s_sup = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if s_inf <= 0.0 {
            return Err(Error::config(format!(
                "coefficient infimum must be positive, got {s_inf}"
            )));
        }
        let bv_seminorm = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        Ok(Self {
            breakpoints,
            values,
            s_inf,
            s_sup,
            bv_seminorm,
        })
    }

    pub fn constant(k: f64) -> Result<Self> {
        Self::from_pieces(Vec::new(), vec![k])
    }

    /// `k_left` on `x < x0`, `k_right` on `x >= x0`.
    pub fn step(k_left: f64, k_right: f64, x0: f64) -> Result<Self> {
        Self::from_pieces(vec![x0], vec![k_left, k_right])
    }

    /// Coefficient with jumps at the geometric sequence `a_n`, truncated
    /// once consecutive breakpoints are closer than `truncation_dx`.
    pub fn geometric(kind: GeometricKind, truncation_dx: f64) -> Result<Self> {
        if !(truncation_dx > 0.0) {
            return Err(Error::config("truncation_dx must be positive"));
        }
        match kind {
            GeometricKind::Monotone => Self::monotone_geometric(truncation_dx),
            GeometricKind::Alternating => Self::alternating_geometric(truncation_dx),
        }
    }

    fn monotone_geometric(truncation_dx: f64) -> Result<Self> {
        let a = |n: i32| 3.0 * (1.0 - 0.8f64.powi(n));
        // N: first index whose gap to the next breakpoint is below the cutoff.
        let mut last = 1;
        while a(last + 1) - a(last) >= truncation_dx {
            last += 1;
        }
        // s = a_1/3 up to a_2, a_n/3 on [a_n, a_{n+1}), then 1 from a_N on.
        let mut breakpoints = Vec::new();
        let mut values = vec![a(1) / 3.0];
        for n in 2..last {
            breakpoints.push(a(n));
            values.push(a(n) / 3.0);
        }
        if last >= 2 {
            breakpoints.push(a(last));
        } else {
            breakpoints.push(GEOMETRIC_PLATEAU);
        }
        values.push(1.0);
        Self::from_pieces(breakpoints, values)
    }

    fn alternating_geometric(truncation_dx: f64) -> Result<Self> {
        let a = |n: i32| (1.0 - (-0.8f64).powi(n)) / 12.0 + 1.0;
        let limit = 13.0 / 12.0;
        // Retained intervals I_n = [min(a_n, a_{n+1}), max(a_n, a_{n+1})).
        let mut intervals = Vec::new();
        let mut n = 1;
        while (a(n + 1) - a(n)).abs() >= truncation_dx {
            let (lo, hi) = (a(n).min(a(n + 1)), a(n).max(a(n + 1)));
            intervals.push((n, lo, hi));
            n += 1;
        }
        let a1 = a(1);
        let mut cuts: Vec<f64> = intervals
            .iter()
            .flat_map(|&(_, lo, hi)| [lo, hi])
            .chain([a1, GEOMETRIC_PLATEAU])
            .collect();
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup();
        let leftmost = cuts[0];
        let value_at = |x: f64| -> f64 {
            if x >= GEOMETRIC_PLATEAU {
                return 1.0;
            }
            if let Some(&(n, _, _)) = intervals
                .iter()
                .rev()
                .find(|&&(_, lo, hi)| lo <= x && x < hi)
            {
                return a(n) / 3.0;
            }
            if x < leftmost {
                a1 / 3.0
            } else {
                limit / 3.0
            }
        };
        let mut breakpoints = Vec::new();
        let mut values = vec![value_at(leftmost - 1.0)];
        for (k, &c) in cuts.iter().enumerate() {
            let next = cuts.get(k + 1).copied().unwrap_or(c + 1.0);
            let v = value_at(0.5 * (c + next));
            if v != *values.last().unwrap() {
                breakpoints.push(c);
                values.push(v);
            }
        }
        Self::from_pieces(breakpoints, values)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        self.values[k]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn s_inf(&self) -> f64 {
        self.s_inf
    }

    pub fn s_sup(&self) -> f64 {
        self.s_sup
    }

    pub fn bv_seminorm(&self) -> f64 {
        self.bv_seminorm
    }

    pub fn left_tail(&self) -> f64 {
        self.values[0]
    }

    pub fn right_tail(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// `s_i = s(x_i)` at the cell centers.
pub fn sample_coefficient(coeff: &RoughCoefficient, grid: &Grid) -> CellField {
    let values = grid.centers().map(|x| coeff.eval(x)).collect();
    CellField::new(*grid, values).expect("coefficient values are finite")
}

/// The full model `(f, nu, nu_bar, mu, s)`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub flux: FluxSpec,
    pub velocity: VelocitySpec,
    pub nu_bar: NuBarSpec,
    pub kernel: KernelSpec,
    pub coefficient: RoughCoefficient,
    /// Optional operating bound on `u`. When set, sup norms entering the CFL
    /// condition are taken over `[0, u_bound]` and the run certifies that the
    /// solution never leaves that range.
    pub u_bound: Option<f64>,
    /// Optional operating bound on `beta = s u`, used for the Lipschitz
    /// constant of `f` and certified at runtime like `u_bound`.
    pub beta_bound: Option<f64>,
}

impl ModelSpec {
    pub fn new(
        flux: FluxSpec,
        velocity: VelocitySpec,
        nu_bar: NuBarSpec,
        kernel: KernelSpec,
        coefficient: RoughCoefficient,
    ) -> Result<Self> {
        let model = Self {
            flux,
            velocity,
            nu_bar,
            kernel,
            coefficient,
            u_bound: None,
            beta_bound: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_u_bound(mut self, u_bound: Option<f64>) -> Result<Self> {
        if let Some(b) = u_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!("u_bound must be positive, got {b}")));
            }
        }
        self.u_bound = u_bound;
        Ok(self)
    }

    pub fn with_beta_bound(mut self, beta_bound: Option<f64>) -> Result<Self> {
        if let Some(b) = beta_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!("beta_bound must be positive, got {b}")));
            }
        }
        self.beta_bound = beta_bound;
        Ok(self)
    }

    /// Checks `f(0) = 0`, `nu_bar(0) = 0`, `inf s > 0` and kernel positivity.
    pub fn validate(&self) -> Result<()> {
        let f0 = self.flux.eval(0.0);
        if !(f0.abs() <= ZERO_TOL) {
            return Err(Error::config(format!("flux must vanish at 0, f(0) = {f0}")));
        }
        let nb0 = self.nu_bar.eval(0.0);
        if !(nb0.abs() <= ZERO_TOL) {
            return Err(Error::config(format!(
                "nu_bar must vanish at 0, nu_bar(0) = {nb0}"
            )));
        }
        if self.coefficient.s_inf() <= 0.0 {
            return Err(Error::config("coefficient infimum must be positive"));
        }
        if let KernelSpec::Bump { epsilon, .. } = self.kernel {
            if !(epsilon > 0.0) {
                return Err(Error::config("kernel support must be positive"));
            }
        }
        Ok(())
    }

    /// Whether the invariant region `[0, 1]` applies: `f(0) = f(1) = 0` and `s >= 1`.
    pub fn has_unit_invariant_region(&self) -> bool {
        self.flux.vanishes_at_zero_and_one() && self.coefficient.s_inf() >= 1.0
    }
}

/// Whether the invariant region covers `u0`: the model qualifies, `u0 >= 0`
/// and `s_i u0_i <= 1`. The last condition is what the inductive argument
/// propagates; `u0 <= 1` alone does not suffice when `s > 1`.
pub fn invariant_region_applies(model: &ModelSpec, u0: &CellField) -> bool {
    if !model.has_unit_invariant_region() || u0.min() < 0.0 {
        return false;
    }
    let s = sample_coefficient(&model.coefficient, u0.grid());
    u0.values().iter().zip(s.values()).all(|(u, s)| s * u <= 1.0)
}

/// Operating intervals and the sup norms evaluated over them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    /// A-priori envelope `K4 exp(K3 T) ||u0||_inf` (may be infinite).
    pub u_envelope: f64,
    /// Upper end of the operating `u`-interval used for the sup norms.
    pub u_max: f64,
    /// Whether `u_max` comes from an explicit bound that must be certified at runtime.
    pub u_max_is_assumed: bool,
    /// Upper end of the operating interval for `beta = s u`.
    pub beta_max: f64,
    /// Upper end of the operating convolution interval `[0, c_max]`.
    pub c_max: f64,
    pub flux_lipschitz: f64,
    pub nu_sup: f64,
    pub nu_prime_sup: f64,
    pub nu_prime_lip: f64,
    pub nu_bar_prime_sup: f64,
    /// `K3 = K1 |f|_Lip ||s||_inf ||nu'||_inf`.
    pub k3: f64,
    /// `K4 = ||s||_inf / inf s`.
    pub k4: f64,
}

struct NormsAt {
    beta_max: f64,
    flux_lipschitz: f64,
    nu_bar_prime_sup: f64,
    c_max: f64,
    nu_sup: f64,
    nu_prime_sup: f64,
    nu_prime_lip: f64,
    k3: f64,
}

fn norms_at(model: &ModelSpec, u0: &CellField, u_max: f64) -> NormsAt {
    let s_sup = model.coefficient.s_sup();
    let beta_max = match model.beta_bound {
        Some(b) => b.min(s_sup * u_max),
        None => s_sup * u_max,
    };
    let flux_lipschitz = model.flux.lipschitz_on(0.0, beta_max);
    let nu_bar_prime_sup = model.nu_bar.prime_sup_on(0.0, u_max);
    let l1 = u0.norm(NormKind::L1);
    let c_max = match model.kernel {
        KernelSpec::Delta => nu_bar_prime_sup * u_max,
        kernel => {
            let mass = kernel.discrete_mass(u0.grid().dx()).max(1.0);
            f64::min(
                kernel.mu_sup() * nu_bar_prime_sup * l1,
                nu_bar_prime_sup * u_max * mass,
            )
        }
    };
    let (nu_sup, nu_prime_sup, nu_prime_lip) = model.velocity.norms_on(0.0, c_max);
    let k1 = nu_bar_prime_sup * model.kernel.mu_prime_sup() * l1;
    let k3 = if flux_lipschitz == 0.0 || l1 == 0.0 {
        0.0
    } else {
        k1 * flux_lipschitz * s_sup * nu_prime_sup
    };
    NormsAt {
        beta_max,
        flux_lipschitz,
        nu_bar_prime_sup,
        c_max,
        nu_sup,
        nu_prime_sup,
        nu_prime_lip,
        k3,
    }
}

/// Computes the operating intervals for `u` and the convolution values up to
/// `horizon`, and the sup norms of `f`, `nu`, `nu'`, `nu_bar'` over them.
///
/// Without an explicit `u_bound` the `u`-interval is the a-priori envelope
/// `K4 exp(K3 T) ||u0||_inf`, iterated to a fixed point when the constants
/// themselves depend on the interval. Under the invariant-region hypotheses
/// the interval is `[0, 1]`.
pub fn operating_bounds(model: &ModelSpec, u0: &CellField, horizon: f64) -> Result<Bounds> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::config(format!("horizon must be non-negative, got {horizon}")));
    }
    let coeff = &model.coefficient;
    let k4 = coeff.s_sup() / coeff.s_inf();
    let u0_sup = u0.norm(NormKind::Linf);
    if let Some(b) = model.beta_bound {
        let s = sample_coefficient(coeff, u0.grid());
        let beta0 = u0.values().iter().zip(s.values()).map(|(u, s)| (u * s).abs()).fold(0.0, f64::max);
        if b < beta0 {
            return Err(Error::config(format!("beta_bound {b} is below max |s u0| = {beta0}")));
        }
    }
    let envelope = |k3: f64| k4 * u0_sup * (k3 * horizon).exp();

    let unit_region = invariant_region_applies(model, u0);

    let (u_max, assumed, norms) = if let Some(bound) = model.u_bound {
        if bound < u0_sup {
            return Err(Error::config(format!(
                "u_bound {bound} is below ||u0||_inf = {u0_sup}"
            )));
        }
        (bound, true, norms_at(model, u0, bound))
    } else if unit_region {
        (1.0, false, norms_at(model, u0, 1.0))
    } else {
        let mut u = k4 * u0_sup;
        let mut norms = norms_at(model, u0, u);
        let mut converged = false;
        for _ in 0..64 {
            let next = envelope(norms.k3);
            if next <= u * (1.0 + 1e-12) {
                converged = true;
                break;
            }
            u = next;
            norms = norms_at(model, u0, u);
            if !u.is_finite() {
                let next = envelope(norms.k3);
                converged = !next.is_finite();
                break;
            }
        }
        if !converged {
            return Err(Error::config(
                "a-priori L-infinity envelope does not settle; set an explicit u_bound",
            ));
        }
        (u, false, norms)
    };

    let u_envelope = envelope(norms.k3);
    let finite = [
        norms.c_max,
        norms.flux_lipschitz,
        norms.nu_sup,
        norms.nu_prime_sup,
        norms.nu_prime_lip,
        norms.nu_bar_prime_sup,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(Error::config(format!(
            "operating bounds are not finite (u_max = {u_max}, c_max = {}); set an explicit u_bound",
            norms.c_max
        )));
    }
    Ok(Bounds {
        u_envelope,
        u_max,
        u_max_is_assumed: assumed,
        beta_max: norms.beta_max,
        c_max: norms.c_max,
        flux_lipschitz: norms.flux_lipschitz,
        nu_sup: norms.nu_sup,
        nu_prime_sup: norms.nu_prime_sup,
        nu_prime_lip: norms.nu_prime_lip,
        nu_bar_prime_sup: norms.nu_bar_prime_sup,
        k3: norms.k3,
        k4,
    })
}
