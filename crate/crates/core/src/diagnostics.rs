//! Lemma constants and per-step certification of the discrete estimates:
//! positivity, mass conservation, L-infinity and BV envelopes, convolution
//! increments and the adapted discrete entropy inequality.

use crate::error::{Error, Result};
use crate::mesh::{total_variation, CellField, FaceField, NormKind};
use crate::model::{Bounds, ModelSpec};
use crate::scheme::{numerical_flux, FluxKind, RunState, SchemeConfig, StepObserver, Stepper};

/// Absolute tolerance for positivity, mass and entropy checks.
pub const EXACT_TOL: f64 = 1e-12;
/// Relative tolerance for the envelope bounds.
pub const ENVELOPE_TOL: f64 = 1e-10;
/// Relative tolerance on the cumulative mass drift of a run.
pub const CUMULATIVE_MASS_TOL: f64 = 1e-9;

/// Constants of the discrete estimates. `K6` depends on the solution norms
/// and is evaluated through [`LemmaConstants::k6_at`] with the envelope norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    /// `K6` at `t = 0`.
    pub k6: f64,
    pub s_inf: f64,
    pub s_sup: f64,
    pub s_bv: f64,
    pub flux_lipschitz: f64,
    pub nu_prime_sup: f64,
    pub nu_prime_lip: f64,
    pub u0_linf: f64,
    pub u0_l1: f64,
    /// `||s u0||_{L1}`, conserved for nonnegative data.
    pub su0_l1: f64,
    /// `TV(s u0)`.
    pub su0_tv: f64,
}

fn mul_or_zero(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl LemmaConstants {
    /// `K4 exp(K3 t) ||u0||_inf`.
    pub fn linf_bound(&self, t: f64) -> f64 {
        mul_or_zero(self.k4 * self.u0_linf, (self.k3 * t).exp())
    }

    /// `K6` with `||u^n||_inf` replaced by the envelope at `t`.
    pub fn k6_at(&self, t: f64) -> f64 {
        let common = self.s_sup * self.flux_lipschitz * self.nu_prime_sup;
        let a = mul_or_zero(mul_or_zero(self.k1, self.s_bv), mul_or_zero(common, self.linf_bound(t)));
        let b = mul_or_zero(self.k2, mul_or_zero(common, self.su0_l1));
        let c = mul_or_zero(
            2.0 * self.k1 * self.k1,
            mul_or_zero(self.s_sup * self.flux_lipschitz * self.nu_prime_lip, self.su0_l1),
        );
        a + b + c
    }

    /// Right-hand side of the total-variation estimate at time `t`.
    pub fn bv_rhs(&self, t: f64) -> f64 {
        let growth = mul_or_zero(self.su0_tv, (self.k5 * t).exp());
        let k6 = self.k6_at(t);
        if !(self.k5.is_finite() && k6.is_finite()) {
            // delta kernel: the estimate carries no information
            return f64::INFINITY;
        }
        let source = if self.k5 * t < 1e-8 {
            // (e^{K5 t} - 1) / K5 -> t as K5 t -> 0
            mul_or_zero(t * (1.0 + 0.5 * self.k5 * t), k6)
        } else {
            mul_or_zero(((self.k5 * t).exp() - 1.0) / self.k5, k6)
        };
        let jumps = mul_or_zero(self.linf_bound(t), self.s_bv);
        (growth + source + jumps) / self.s_inf
    }
}

/// Computes `K1..K6` from the model, the initial data and the operating bounds.
pub fn compute_constants(model: &ModelSpec, u0: &CellField, bounds: &Bounds) -> LemmaConstants {
    let coeff = &model.coefficient;
    let grid = *u0.grid();
    let s = crate::model::sample_coefficient(coeff, &grid);
    let u0_l1 = u0.norm(NormKind::L1);
    let su: Vec<f64> = u0.values().iter().zip(s.values()).map(|(u, s)| u * s).collect();
    let su0_l1 = grid.dx() * su.iter().map(|v| v.abs()).sum::<f64>();
    let su0_tv = total_variation(&su);
    let (s_inf, s_sup, s_bv) = (coeff.s_inf(), coeff.s_sup(), coeff.bv_seminorm());
    let kernel = &model.kernel;
    let k1 = mul_or_zero(bounds.nu_bar_prime_sup * kernel.mu_prime_sup(), u0_l1);
    let k2 = mul_or_zero(2.0 * bounds.nu_bar_prime_sup * kernel.mu_second_sup(), u0_l1);
    let lip_chain = s_sup * bounds.flux_lipschitz * bounds.nu_prime_sup;
    let k3 = mul_or_zero(k1, lip_chain);
    let k4 = s_sup / s_inf;
    let k5 = mul_or_zero(k1, lip_chain);
    let mut c = LemmaConstants {
        k1,
        k2,
        k3,
        k4,
        k5,
        k6: 0.0,
        s_inf,
        s_sup,
        s_bv,
        flux_lipschitz: bounds.flux_lipschitz,
        nu_prime_sup: bounds.nu_prime_sup,
        nu_prime_lip: bounds.nu_prime_lip,
        u0_linf: u0.norm(NormKind::Linf),
        u0_l1,
        su0_l1,
        su0_tv,
    };
    c.k6 = c.k6_at(0.0);
    c
}

/// Per-step measurements and pass/fail of every check.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    /// `dx * sum u`.
    pub mass: f64,
    /// `|sum u^{n+1} - sum u^n| / max(1, sum |u^n|)`.
    pub mass_drift: f64,
    pub min_u: f64,
    pub max_u: f64,
    /// `max_i |s_i u_i|`.
    pub beta_max: f64,
    pub tv_u: f64,
    pub linf_bound: f64,
    pub bv_bound: f64,
    /// `dx * sum |u^{n+1} - u^n| / dt`.
    pub time_lipschitz: f64,
    pub entropy_violation_max: f64,
    pub entropy_location: Option<EntropyResidual>,
    /// Largest `|c_{j+1} - c_j| / (K1 dx)`.
    pub convolution_first_margin: f64,
    /// Largest `|c_{j+1} - 2 c_j + c_{j-1}| / (K2 dx^2)`.
    pub convolution_second_margin: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// `max(|u_0|, |u_{N-1}|)`.
    pub boundary_value: f64,
    pub positivity_ok: bool,
    pub mass_ok: bool,
    pub linf_bound_ok: bool,
    pub bv_bound_ok: bool,
}

/// Checks positivity, per-step mass drift and the two envelopes for one step.
pub fn verify_step_invariants(prev: &RunState, next: &RunState, constants: &LemmaConstants) -> StepRecord {
    let dx = next.grid().dx();
    let u = next.u.values();
    let sum_prev: f64 = prev.u.sum();
    let sum_abs_prev: f64 = prev.u.values().iter().map(|v| v.abs()).sum();
    let sum_next: f64 = next.u.sum();
    let mass_drift = (sum_next - sum_prev).abs() / sum_abs_prev.max(1.0);
    let min_u = next.u.min();
    let max_u = next.u.max();
    let linf = next.u.norm(NormKind::Linf);
    let tv_u = total_variation(u);
    let beta_max = u.iter().zip(next.s.values()).map(|(u, s)| (u * s).abs()).fold(0.0, f64::max);
    let linf_bound = constants.linf_bound(next.t);
    let bv_bound = constants.bv_rhs(next.t);
    let change: f64 = dx * u.iter().zip(prev.u.values()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let time_lipschitz = if next.dt > 0.0 { change / next.dt } else { 0.0 };
    StepRecord {
        step: next.n,
        t: next.t,
        dt: next.dt,
        mass: next.u.mass(),
        mass_drift,
        min_u,
        max_u,
        beta_max,
        tv_u,
        linf_bound,
        bv_bound,
        time_lipschitz,
        entropy_violation_max: 0.0,
        entropy_location: None,
        convolution_first_margin: 0.0,
        convolution_second_margin: 0.0,
        c_min: 0.0,
        c_max: 0.0,
        boundary_value: u[0].abs().max(u[u.len() - 1].abs()),
        positivity_ok: min_u >= -EXACT_TOL,
        mass_ok: mass_drift <= EXACT_TOL,
        linf_bound_ok: linf <= linf_bound * (1.0 + ENVELOPE_TOL),
        bv_bound_ok: tv_u <= bv_bound * (1.0 + ENVELOPE_TOL),
    }
}

/// Numerical entropy flux
/// `F(max(b_l, alpha), max(b_r, alpha)) - F(min(b_l, alpha), min(b_r, alpha))`
/// in the variables `beta = s u`, where `s_alpha = alpha / s` turns into `alpha`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn entropy_flux(
    kind: FluxKind,
    nu_c: f64,
    beta_left: f64,
    beta_right: f64,
    alpha: f64,
    theta_lf: f64,
    lambda: f64,
    f: &crate::model::FluxSpec,
) -> f64 {
    numerical_flux(kind, nu_c, beta_left.max(alpha), beta_right.max(alpha), theta_lf, lambda, f)
        - numerical_flux(kind, nu_c, beta_left.min(alpha), beta_right.min(alpha), theta_lf, lambda, f)
}

/// Largest entropy residual and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyResidual {
    pub residual: f64,
    pub step: u64,
    pub cell: usize,
    pub alpha: f64,
}

/// Sample of `alpha`: `count` equispaced points on `[0, 1.05 max_i s_i u_i]`
/// (including the end points) plus `alpha = 0`.
pub fn alpha_samples(state: &RunState, count: usize) -> Vec<f64> {
    let top = (0..state.u.values().len() as isize)
        .map(|i| state.beta(i))
        .fold(0.0f64, f64::max)
        * 1.05;
    let mut alphas = vec![0.0];
    if count == 1 {
        alphas.push(top);
    } else {
        alphas.extend((0..count).map(|k| top * k as f64 / (count - 1) as f64));
    }
    alphas
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Maximum over cells and `alphas` of the discrete entropy residual
/// `|u^{n+1} - s_a| - |u^n - s_a| + lambda (G_{i+1/2} - G_{i-1/2})
///  + lambda sgn(u^{n+1} - s_a) f(a) (nu(c_{i+1/2}) - nu(c_{i-1/2}))`.
pub fn entropy_residual(
    prev: &RunState,
    next: &RunState,
    c_faces: &FaceField,
    model: &ModelSpec,
    config: &SchemeConfig,
    alphas: &[f64],
) -> EntropyResidual {
    let n = prev.u.values().len();
    let lambda = next.lambda;
    let f = &model.flux;
    let nu: Vec<f64> = c_faces.values().iter().map(|&c| model.velocity.eval(c)).collect();
    let beta: Vec<f64> = (-1..=n as isize).map(|i| prev.beta(i)).collect();
    let mut worst = EntropyResidual {
        residual: f64::NEG_INFINITY,
        step: next.n,
        cell: 0,
        alpha: 0.0,
    };
    let mut g = vec![0.0; n + 1];
    for &alpha in alphas {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = entropy_flux(
                config.flux_kind,
                nu[j],
                beta[j],
                beta[j + 1],
                alpha,
                config.theta_lf,
                lambda,
                f,
            );
        }
        let f_alpha = f.eval(alpha);
        for i in 0..n {
            let s_alpha = alpha / prev.s.values()[i];
            let un = prev.u.values()[i];
            let up = next.u.values()[i];
            let r = (up - s_alpha).abs() - (un - s_alpha).abs()
                + lambda * (g[i + 1] - g[i])
                + lambda * sgn(up - s_alpha) * f_alpha * (nu[i + 1] - nu[i]);
            if r > worst.residual {
                worst = EntropyResidual {
                    residual: r,
                    step: next.n,
                    cell: i,
                    alpha,
                };
            }
        }
    }
    worst
}

/// Margins of the convolution increments against `K1 dx` and `K2 dx^2`.
/// Both lie in `[0, 1]` whenever the increment estimates hold.
pub fn check_convolution_bounds(c: &FaceField, constants: &LemmaConstants, dx: f64) -> (f64, f64) {
    let v = c.values();
    let first = v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let second = v
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0, f64::max);
    let ratio = |num: f64, den: f64| {
        if num == 0.0 {
            0.0
        } else {
            num / den
        }
    };
    (ratio(first, constants.k1 * dx), ratio(second, constants.k2 * dx * dx))
}

/// Run-level pass/fail flags; each is the conjunction over all steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsFlags {
    pub positivity_ok: bool,
    pub mass_ok: bool,
    pub cumulative_mass_ok: bool,
    pub linf_bound_ok: bool,
    pub bv_bound_ok: bool,
    pub entropy_ok: bool,
    pub convolution_bounds_ok: bool,
    /// `None` when the invariant-region hypotheses do not hold.
    pub invariant_region_ok: Option<bool>,
    pub support_interior_ok: bool,
    /// `||u^n||_inf` and the convolution values stayed inside the operating
    /// intervals used for the time step.
    pub operating_range_ok: bool,
}

impl DiagnosticsFlags {
    fn passing(invariant_region: bool) -> Self {
        Self {
            positivity_ok: true,
            mass_ok: true,
            cumulative_mass_ok: true,
            linf_bound_ok: true,
            bv_bound_ok: true,
            entropy_ok: true,
            convolution_bounds_ok: true,
            invariant_region_ok: invariant_region.then_some(true),
            support_interior_ok: true,
            operating_range_ok: true,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.named().iter().all(|(_, v)| v.unwrap_or(true))
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, Option<bool>); 10] {
        [
            ("positivity_ok", Some(self.positivity_ok)),
            ("mass_ok", Some(self.mass_ok)),
            ("cumulative_mass_ok", Some(self.cumulative_mass_ok)),
            ("linf_bound_ok", Some(self.linf_bound_ok)),
            ("bv_bound_ok", Some(self.bv_bound_ok)),
            ("entropy_ok", Some(self.entropy_ok)),
            ("convolution_bounds_ok", Some(self.convolution_bounds_ok)),
            ("invariant_region_ok", self.invariant_region_ok),
            ("support_interior_ok", Some(self.support_interior_ok)),
            ("operating_range_ok", Some(self.operating_range_ok)),
        ]
    }

    /// Names of the failing flags.
    pub fn failures(&self) -> Vec<&'static str> {
        self.named()
            .iter()
            .filter(|(_, v)| *v == Some(false))
            .map(|(k, _)| *k)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsOptions {
    /// Number of equispaced `alpha` samples; `alpha = 0` is always added.
    pub alpha_count: usize,
    pub check_entropy: bool,
    /// Keep every per-step record (otherwise only the summary is kept).
    pub keep_records: bool,
    /// Threshold on the boundary cells for the support check.
    pub boundary_tolerance: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            alpha_count: 9,
            check_entropy: true,
            keep_records: true,
            boundary_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub constants: LemmaConstants,
    pub bounds: Bounds,
    pub flags: DiagnosticsFlags,
    pub records: Vec<StepRecord>,
    pub steps: u64,
    pub worst_entropy: Option<EntropyResidual>,
    pub max_mass_drift: f64,
    pub cumulative_mass_drift: f64,
    pub max_convolution_margins: (f64, f64),
    /// Empirical Lipschitz-in-time constant `max dx sum |u^{n+1} - u^n| / dt`.
    pub k7_empirical: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub c_min: f64,
    pub c_max: f64,
}

impl DiagnosticsReport {
    pub fn all_ok(&self) -> bool {
        self.flags.all_ok()
    }

    /// Error describing the failed flags, if any.
    pub fn ensure_ok(&self) -> Result<()> {
        if self.all_ok() {
            return Ok(());
        }
        let mut msg = format!("diagnostics failed: {}", self.flags.failures().join(", "));
        if let (false, Some(w)) = (self.flags.entropy_ok, self.worst_entropy) {
            msg.push_str(&format!(
                "; entropy residual {:e} at step {}, cell {}, alpha {}",
                w.residual, w.step, w.cell, w.alpha
            ));
        }
        Err(Error::Violation(msg))
    }
}

/// Step observer that runs every check and assembles a [`DiagnosticsReport`].
#[derive(Debug, Clone)]
pub struct DiagnosticsObserver {
    model: ModelSpec,
    config: SchemeConfig,
    options: DiagnosticsOptions,
    report: DiagnosticsReport,
    initial_sum: f64,
    initial_abs_sum: f64,
    check_convolution: bool,
    invariant_region: bool,
}

impl DiagnosticsObserver {
    pub fn new(stepper: &Stepper, bounds: &Bounds, u0: &CellField, options: DiagnosticsOptions) -> Self {
        let model = stepper.model().clone();
        let constants = compute_constants(&model, u0, bounds);
        let invariant_region = crate::model::invariant_region_applies(&model, u0);
        let check_convolution = !model.kernel.is_local() && constants.k1 > 0.0;
        let report = DiagnosticsReport {
            constants,
            bounds: *bounds,
            flags: DiagnosticsFlags::passing(invariant_region),
            records: Vec::new(),
            steps: 0,
            worst_entropy: None,
            max_mass_drift: 0.0,
            cumulative_mass_drift: 0.0,
            max_convolution_margins: (0.0, 0.0),
            k7_empirical: 0.0,
            u_min: u0.min(),
            u_max: u0.max(),
            c_min: f64::INFINITY,
            c_max: f64::NEG_INFINITY,
        };
        Self {
            model,
            config: *stepper.config(),
            options,
            report,
            initial_sum: u0.sum(),
            initial_abs_sum: u0.values().iter().map(|v| v.abs()).sum(),
            check_convolution,
            invariant_region,
        }
    }

    pub fn report(&self) -> &DiagnosticsReport {
        &self.report
    }

    pub fn finish(self) -> DiagnosticsReport {
        let mut r = self.report;
        if !r.c_min.is_finite() {
            r.c_min = 0.0;
            r.c_max = 0.0;
        }
        r
    }
}

impl StepObserver for DiagnosticsObserver {
    fn on_start(&mut self, state: &RunState) -> Result<()> {
        let r = &mut self.report;
        let u_sup = state.u.norm(NormKind::Linf);
        if u_sup > r.bounds.u_max * (1.0 + ENVELOPE_TOL) {
            r.flags.operating_range_ok = false;
        }
        if self.invariant_region && (state.u.min() < -EXACT_TOL || state.u.max() > 1.0 + EXACT_TOL) {
            r.flags.invariant_region_ok = Some(false);
        }
        Ok(())
    }

    fn on_step(&mut self, prev: &RunState, next: &RunState, faces: &FaceField) -> Result<()> {
        let constants = self.report.constants;
        let mut rec = verify_step_invariants(prev, next, &constants);
        let dx = next.grid().dx();
        if self.check_convolution {
            let (a, b) = check_convolution_bounds(faces, &constants, dx);
            rec.convolution_first_margin = a;
            rec.convolution_second_margin = b;
        }
        let c = faces.values();
        rec.c_min = c.iter().copied().fold(f64::INFINITY, f64::min);
        rec.c_max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.options.check_entropy {
            let alphas = alpha_samples(prev, self.options.alpha_count);
            let e = entropy_residual(prev, next, faces, &self.model, &self.config, &alphas);
            rec.entropy_violation_max = e.residual;
            rec.entropy_location = Some(e);
        }

        let r = &mut self.report;
        let fl = &mut r.flags;
        fl.positivity_ok &= rec.positivity_ok;
        fl.mass_ok &= rec.mass_ok;
        fl.linf_bound_ok &= rec.linf_bound_ok;
        fl.bv_bound_ok &= rec.bv_bound_ok;
        fl.entropy_ok &= rec.entropy_violation_max <= EXACT_TOL;
        fl.convolution_bounds_ok &= rec.convolution_first_margin <= 1.0 + ENVELOPE_TOL
            && rec.convolution_second_margin <= 1.0 + ENVELOPE_TOL;
        let limit = self.options.boundary_tolerance * constants.u0_linf.max(1.0);
        fl.support_interior_ok &= rec.boundary_value <= limit;
        let c_hi = r.bounds.c_max * (1.0 + ENVELOPE_TOL) + EXACT_TOL;
        let u_sup = rec.max_u.max(-rec.min_u);
        fl.operating_range_ok &= u_sup <= r.bounds.u_max * (1.0 + ENVELOPE_TOL)
            && rec.beta_max <= r.bounds.beta_max * (1.0 + ENVELOPE_TOL)
            && rec.c_min >= -EXACT_TOL
            && rec.c_max <= c_hi;
        if let Some(ok) = fl.invariant_region_ok.as_mut() {
            *ok &= rec.min_u >= -EXACT_TOL && rec.max_u <= 1.0 + EXACT_TOL;
        }

        if let Some(e) = rec.entropy_location {
            if r.worst_entropy.is_none_or(|w| e.residual > w.residual) {
                r.worst_entropy = Some(e);
            }
        }
        r.steps = next.n;
        r.max_mass_drift = r.max_mass_drift.max(rec.mass_drift);
        r.cumulative_mass_drift = (next.u.sum() - self.initial_sum).abs() / self.initial_abs_sum.max(1.0);
        fl.cumulative_mass_ok = r.cumulative_mass_drift <= CUMULATIVE_MASS_TOL;
        r.max_convolution_margins.0 = r.max_convolution_margins.0.max(rec.convolution_first_margin);
        r.max_convolution_margins.1 = r.max_convolution_margins.1.max(rec.convolution_second_margin);
        r.k7_empirical = r.k7_empirical.max(rec.time_lipschitz);
        r.u_min = r.u_min.min(rec.min_u);
        r.u_max = r.u_max.max(rec.max_u);
        r.c_min = r.c_min.min(rec.c_min);
        r.c_max = r.c_max.max(rec.c_max);
        if self.options.keep_records {
            r.records.push(rec);
        }
        Ok(())
    }
}

/// Stored time levels of a run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CellField>,
}

impl StepObserver for Trajectory {
    fn on_start(&mut self, state: &RunState) -> Result<()> {
        self.times.clear();
        self.states.clear();
        self.times.push(state.t);
        self.states.push(state.u.clone());
        Ok(())
    }

    fn on_step(&mut self, _prev: &RunState, next: &RunState, _faces: &FaceField) -> Result<()> {
        self.times.push(next.t);
        self.states.push(next.u.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityGap {
    pub times: Vec<f64>,
    /// `dx * sum |u_A^n - u_B^n|`.
    pub gaps: Vec<f64>,
    /// Least-squares slope of `ln(gap(t) / gap(0))` against `t` (zero when `gap(0) = 0`).
    pub fitted_rate: f64,
    /// Smallest `C` with `gap(t) <= gap(0) exp(C t)` at every sample.
    pub envelope_rate: f64,
}

/// L1 distance between two trajectories at every stored level.
pub fn l1_stability_gap(a: &Trajectory, b: &Trajectory) -> Result<StabilityGap> {
    if a.states.len() != b.states.len() {
        return Err(Error::Usage(format!(
            "trajectories have {} and {} levels",
            a.states.len(),
            b.states.len()
        )));
    }
    let mut gaps = Vec::with_capacity(a.states.len());
    for ((ua, ub), (ta, tb)) in a.states.iter().zip(&b.states).zip(a.times.iter().zip(&b.times)) {
        if ua.grid() != ub.grid() || (ta - tb).abs() > 1e-12 * ta.abs().max(1.0) {
            return Err(Error::Usage("trajectories use different grids or time levels".into()));
        }
        let dx = ua.grid().dx();
        gaps.push(dx * ua.values().iter().zip(ub.values()).map(|(x, y)| (x - y).abs()).sum::<f64>());
    }
    let (mut fitted_rate, mut envelope_rate) = (0.0, 0.0);
    if let Some(&g0) = gaps.first() {
        if g0 > 0.0 {
            let (mut num, mut den) = (0.0, 0.0);
            for (&t, &g) in a.times.iter().zip(&gaps).skip(1) {
                if t > 0.0 && g > 0.0 {
                    let y = (g / g0).ln();
                    num += t * y;
                    den += t * t;
                    envelope_rate = f64::max(envelope_rate, y / t);
                }
            }
            if den > 0.0 {
                fitted_rate = num / den;
            }
        }
    }
    Ok(StabilityGap {
        times: a.times.clone(),
        gaps,
        fitted_rate,
        envelope_rate,
    })
}
