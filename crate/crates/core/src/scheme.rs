//! Numerical fluxes, CFL time step and the explicit marching update
//!
//! ```text
//! u_i^{n+1} = u_i^n - lambda * ( F(nu(c_{i+1/2}), s_i u_i, s_{i+1} u_{i+1})
//!                              - F(nu(c_{i-1/2}), s_{i-1} u_{i-1}, s_i u_i) )
//! ```

use crate::convolution::{self, KernelStencil};
use crate::diagnostics::{DiagnosticsObserver, DiagnosticsOptions, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::mesh::{CellField, FaceField, Grid, NormKind};
use crate::model::{operating_bounds, sample_coefficient, Bounds, FluxSpec, KernelSpec, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxKind {
    LaxFriedrichs,
    Godunov,
}

impl FluxKind {
    pub fn name(&self) -> &'static str {
        match self {
            FluxKind::LaxFriedrichs => "lax_friedrichs",
            FluxKind::Godunov => "godunov",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub flux_kind: FluxKind,
    /// Diffusion parameter of the Lax-Friedrichs flux.
    pub theta_lf: f64,
    /// Multiplier on the admissible `lambda`, in `(0, 1]`.
    pub cfl_safety: f64,
    /// Convex-combination weight for the face values entering the convolution.
    pub theta_face: f64,
    /// Replace the kernel by the delta (local limit).
    pub local_mode: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            flux_kind: FluxKind::LaxFriedrichs,
            theta_lf: 1.0 / 3.0,
            cfl_safety: 1.0,
            theta_face: convolution::DEFAULT_THETA_FACE,
            local_mode: false,
        }
    }
}

impl SchemeConfig {
    pub fn godunov() -> Self {
        Self {
            flux_kind: FluxKind::Godunov,
            ..Self::default()
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        convolution::check_theta(self.theta_face)?;
        if self.flux_kind == FluxKind::LaxFriedrichs {
            let upper = 2.0 / (3.0 * model.coefficient.s_sup());
            if !(self.theta_lf > 0.0 && self.theta_lf < upper) {
                return Err(Error::config(format!(
                    "theta_lf = {} must lie in (0, {upper}) = (0, 2/(3 ||s||_inf))",
                    self.theta_lf
                )));
            }
        }
        Ok(())
    }

    /// The model actually advanced: the kernel is replaced by the delta in local mode.
    pub fn effective_model(&self, model: &ModelSpec) -> ModelSpec {
        let mut m = model.clone();
        if self.local_mode {
            m.kernel = KernelSpec::Delta;
        }
        m
    }
}

/// Lax-Friedrichs type flux
/// `(nu_c / 2)(f(b_l) + f(b_r)) - theta / (2 lambda) (b_r - b_l)`.
#[inline]
pub fn lf_flux(nu_c: f64, beta_left: f64, beta_right: f64, theta_lf: f64, lambda: f64, f: &FluxSpec) -> f64 {
    if beta_left == beta_right {
        return nu_c * f.eval(beta_left);
    }
    0.5 * nu_c * (f.eval(beta_left) + f.eval(beta_right))
        - theta_lf / (2.0 * lambda) * (beta_right - beta_left)
}

/// Godunov flux of `beta_t + f(beta)_x = 0`.
#[inline]
pub fn godunov_local_flux(beta_left: f64, beta_right: f64, f: &FluxSpec) -> f64 {
    f.godunov(beta_left, beta_right)
}

/// Godunov type flux `nu_c * F_God(b_l, b_r)`. For `nu_c < 0` the extremum is
/// taken for the flux `nu_c f`, which keeps the scheme monotone.
#[inline]
pub fn godunov_flux(nu_c: f64, beta_left: f64, beta_right: f64, f: &FluxSpec) -> f64 {
    if nu_c == 0.0 {
        return 0.0;
    }
    if beta_left == beta_right {
        return nu_c * f.eval(beta_left);
    }
    if nu_c > 0.0 {
        nu_c * godunov_local_flux(beta_left, beta_right, f)
    } else {
        // extremum of -f swaps min and max
        nu_c * f.godunov(beta_right, beta_left)
    }
}

/// Numerical flux of the configured kind.
#[inline]
pub fn numerical_flux(
    kind: FluxKind,
    nu_c: f64,
    beta_left: f64,
    beta_right: f64,
    theta_lf: f64,
    lambda: f64,
    f: &FluxSpec,
) -> f64 {
    match kind {
        FluxKind::LaxFriedrichs => lf_flux(nu_c, beta_left, beta_right, theta_lf, lambda, f),
        FluxKind::Godunov => godunov_flux(nu_c, beta_left, beta_right, f),
    }
}

/// Largest admissible `lambda = dt / dx` for the configured flux.
pub fn admissible_lambda(config: &SchemeConfig, model: &ModelSpec, bounds: &Bounds) -> Result<f64> {
    let s = model.coefficient.s_sup();
    let speed = s * bounds.flux_lipschitz * bounds.nu_sup;
    let lambda = match config.flux_kind {
        FluxKind::LaxFriedrichs => {
            let ts = 6.0 * config.theta_lf * s;
            let numerator = 1f64.min(4.0 - ts).min(ts);
            numerator / (1.0 + 6.0 * speed)
        }
        FluxKind::Godunov => {
            if speed > 0.0 {
                1.0 / (6.0 * speed)
            } else {
                // no transport: any lambda works, cap at one cell per unit step
                1.0
            }
        }
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!(
            "no admissible time step (lambda_max = {lambda}); check theta_lf and the operating bounds"
        )));
    }
    Ok(lambda)
}

/// `dt = cfl_safety * lambda_max * dx`.
pub fn compute_timestep(config: &SchemeConfig, model: &ModelSpec, grid: &Grid, bounds: &Bounds) -> Result<f64> {
    Ok(config.cfl_safety * admissible_lambda(config, model, bounds)? * grid.dx())
}

/// One time level of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub u: CellField,
    /// Coefficient sampled at cell centers.
    pub s: CellField,
    /// Coefficient used for the ghost cells left and right of the window.
    pub s_ghost: (f64, f64),
    pub t: f64,
    pub n: u64,
    /// Step size that produced this level (the nominal step before the first one).
    pub dt: f64,
    pub lambda: f64,
}

impl RunState {
    pub fn new(model: &ModelSpec, u0: CellField, dt: f64) -> Self {
        let grid = *u0.grid();
        let s = sample_coefficient(&model.coefficient, &grid);
        Self {
            u: u0,
            s,
            s_ghost: (model.coefficient.left_tail(), model.coefficient.right_tail()),
            t: 0.0,
            n: 0,
            dt,
            lambda: dt / grid.dx(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// `s_i` with ghost values outside the window.
    #[inline]
    pub fn s_at(&self, i: isize) -> f64 {
        let n = self.s.values().len() as isize;
        if i < 0 {
            self.s_ghost.0
        } else if i >= n {
            self.s_ghost.1
        } else {
            self.s.values()[i as usize]
        }
    }

    /// `beta_i = s_i u_i` with zero extension for `u`.
    #[inline]
    pub fn beta(&self, i: isize) -> f64 {
        self.s_at(i) * self.u.get(i)
    }
}

/// Observer invoked after every completed step.
pub trait StepObserver {
    fn on_start(&mut self, _state: &RunState) -> Result<()> {
        Ok(())
    }

    fn on_step(&mut self, prev: &RunState, next: &RunState, faces: &FaceField) -> Result<()>;
}

/// Steps a fixed model/config pair on one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    model: ModelSpec,
    config: SchemeConfig,
    stencil: Option<KernelStencil>,
}

impl Stepper {
    /// `model` is used as given; apply [`SchemeConfig::effective_model`] first
    /// for local mode.
    pub fn new(model: &ModelSpec, config: &SchemeConfig, grid: &Grid) -> Result<Self> {
        config.validate(model)?;
        let model = config.effective_model(model);
        let stencil = match model.kernel {
            KernelSpec::Delta => None,
            k => {
                if let Some(eps) = k.epsilon() {
                    if eps < grid.dx() {
                        log::warn!("kernel support eps = {eps} is below dx = {}", grid.dx());
                    }
                }
                Some(KernelStencil::new(&k, grid.dx()))
            }
        };
        Ok(Self {
            model,
            config: *config,
            stencil,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    /// Nonlocal terms at every face for the state `u`.
    pub fn faces(&self, u: &CellField) -> Result<FaceField> {
        let theta = self.config.theta_face;
        match &self.stencil {
            Some(st) => FaceField::new(
                *u.grid(),
                convolution::convolve_with_stencil(u, st, &self.model.nu_bar, theta),
            ),
            None => convolution::delta_convolution(u, &self.model.nu_bar, theta),
        }
    }

    /// Numerical fluxes at all `n + 1` faces for frozen nonlocal terms.
    pub fn face_fluxes(&self, state: &RunState, faces: &FaceField, lambda: f64) -> Vec<f64> {
        let f = &self.model.flux;
        let nu = &self.model.velocity;
        let kind = self.config.flux_kind;
        let theta = self.config.theta_lf;
        faces
            .values()
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let j = j as isize;
                numerical_flux(kind, nu.eval(c), state.beta(j - 1), state.beta(j), theta, lambda, f)
            })
            .collect()
    }

    /// Advances one step of size `dt`, returning the new level and the faces used.
    pub fn step_with_dt(&self, state: &RunState, dt: f64) -> Result<(RunState, FaceField)> {
        let grid = *state.grid();
        let lambda = dt / grid.dx();
        let faces = self.faces(&state.u)?;
        let fluxes = self.face_fluxes(state, &faces, lambda);
        let step = state.n + 1;
        let mut values = Vec::with_capacity(grid.n_cells());
        for (i, (&u, w)) in state.u.values().iter().zip(fluxes.windows(2)).enumerate() {
            let v = u - lambda * (w[1] - w[0]);
            if !v.is_finite() {
                return Err(Error::BlowUp {
                    step,
                    cell: i,
                    value: v,
                });
            }
            values.push(v);
        }
        let next = RunState {
            u: CellField::new(grid, values)?,
            s: state.s.clone(),
            s_ghost: state.s_ghost,
            t: state.t + dt,
            n: step,
            dt,
            lambda,
        };
        Ok((next, faces))
    }

    pub fn step(&self, state: &RunState) -> Result<(RunState, FaceField)> {
        self.step_with_dt(state, state.lambda * state.grid().dx())
    }
}

/// Single explicit step from `state` using its stored `dt`.
pub fn step(state: &RunState, model: &ModelSpec, config: &SchemeConfig) -> Result<RunState> {
    Stepper::new(model, config, state.grid())?
        .step(state)
        .map(|(next, _)| next)
}

/// Options for [`run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// `None` disables the diagnostics observer.
    pub diagnostics: Option<DiagnosticsOptions>,
    /// Abort with [`Error::BoundaryReached`] when a boundary cell exceeds
    /// `boundary_tolerance * max(1, ||u0||_inf)`.
    pub enforce_interior_support: bool,
    pub boundary_tolerance: f64,
    /// Override the computed time step (must not exceed the admissible one).
    pub dt: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            diagnostics: Some(DiagnosticsOptions::default()),
            enforce_interior_support: true,
            boundary_tolerance: 1e-12,
            dt: None,
        }
    }
}

impl RunOptions {
    pub fn without_diagnostics() -> Self {
        Self {
            diagnostics: None,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: RunState,
    pub bounds: Bounds,
    /// Nominal time step (all steps but possibly the last).
    pub dt: f64,
    pub report: Option<DiagnosticsReport>,
}

/// Prepared run: bounds, time step and stepper for one model/grid/config.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub stepper: Stepper,
    pub bounds: Bounds,
    pub dt: f64,
}

impl Simulation {
    pub fn new(model: &ModelSpec, grid: &Grid, config: &SchemeConfig, u0: &CellField, t_final: f64) -> Result<Self> {
        if u0.grid() != grid {
            return Err(Error::Usage("initial data lives on a different grid".into()));
        }
        let stepper = Stepper::new(model, config, grid)?;
        let bounds = operating_bounds(stepper.model(), u0, t_final)?;
        let dt = compute_timestep(config, stepper.model(), grid, &bounds)?;
        Ok(Self { stepper, bounds, dt })
    }
}

/// Marches from `u0` to `t_final`, shortening the last step to land on
/// `t_final` exactly, and notifies the observers after each step.
pub fn run(
    model: &ModelSpec,
    grid: &Grid,
    config: &SchemeConfig,
    u0: &CellField,
    t_final: f64,
    options: &RunOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<RunOutput> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::config(format!("t_final must be non-negative, got {t_final}")));
    }
    let sim = Simulation::new(model, grid, config, u0, t_final)?;
    let dt = match options.dt {
        Some(dt) if dt > sim.dt * (1.0 + 1e-12) => {
            return Err(Error::config(format!(
                "requested dt = {dt} exceeds the admissible {}",
                sim.dt
            )))
        }
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::config(format!("dt must be positive, got {dt}"))),
        None => sim.dt,
    };
    let stepper = &sim.stepper;
    let mut diag = options
        .diagnostics
        .as_ref()
        .map(|opts| DiagnosticsObserver::new(stepper, &sim.bounds, u0, opts.clone()));

    let mut state = RunState::new(stepper.model(), u0.clone(), dt);
    if let Some(d) = diag.as_mut() {
        d.on_start(&state)?;
    }
    for obs in observers.iter_mut() {
        obs.on_start(&state)?;
    }
    let boundary_limit = options.boundary_tolerance * u0.norm(NormKind::Linf).max(1.0);

    // Step count fixed up front so that t lands on t_final without drift.
    let full_steps = (t_final / dt).floor() as u64;
    let remainder = t_final - full_steps as f64 * dt;
    let total = if remainder > 1e-12 * dt { full_steps + 1 } else { full_steps };
    for k in 0..total {
        let last = k + 1 == total;
        let this_dt = if last && remainder > 1e-12 * dt { remainder } else { dt };
        let (mut next, faces) = stepper.step_with_dt(&state, this_dt)?;
        if last {
            next.t = t_final;
        }
        if let Some(d) = diag.as_mut() {
            d.on_step(&state, &next, &faces)?;
        }
        for obs in observers.iter_mut() {
            obs.on_step(&state, &next, &faces)?;
        }
        if options.enforce_interior_support {
            let edge = next.u.values()[0]
                .abs()
                .max(next.u.values()[grid.n_cells() - 1].abs());
            if edge > boundary_limit {
                return Err(Error::BoundaryReached {
                    step: next.n,
                    t: next.t,
                    value: edge,
                });
            }
        }
        state = next;
    }
    Ok(RunOutput {
        state,
        bounds: sim.bounds,
        dt,
        report: diag.map(|d| d.finish()),
    })
}
