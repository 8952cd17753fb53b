//! Refinement studies, the nonlocal-to-local kernel sweep and LF/Godunov
//! cross-validation, plus grid-to-grid L1 comparison.

use rayon::prelude::*;

use crate::diagnostics::{DiagnosticsOptions, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::mesh::{cell_average, CellField, FaceField, Grid, DEFAULT_QUAD_POINTS};
use crate::model::{
    FluxSpec, GeometricKind, KernelSpec, ModelSpec, NuBarSpec, RoughCoefficient, VelocitySpec,
};
use crate::scheme::{run, FluxKind, RunOptions, RunState, SchemeConfig, StepObserver};

/// Block-averages `fine` onto `coarse`; the cell ratio must be integral.
pub fn project(fine: &CellField, coarse: &Grid) -> Result<CellField> {
    let ratio = fine
        .grid()
        .refinement_ratio(coarse)
        .ok_or_else(|| Error::Usage("grids are not nested by an integral ratio".into()))?;
    let values = fine
        .values()
        .chunks(ratio)
        .map(|c| c.iter().sum::<f64>() / ratio as f64)
        .collect();
    CellField::new(*coarse, values)
}

/// `dx * sum |a_i - b_i|` on the coarser of the two grids.
pub fn l1_distance(a: &CellField, b: &CellField) -> Result<f64> {
    let (a, b) = if a.grid().n_cells() >= b.grid().n_cells() {
        (project(a, b.grid())?, b.clone())
    } else {
        (a.clone(), project(b, a.grid())?)
    };
    let dx = a.grid().dx();
    Ok(dx * a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxPreset {
    Linear,
    Lwr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityPreset {
    /// `nu(a) = 1 - a`
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuBarPreset {
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientPreset {
    Constant(f64),
    Step { left: f64, right: f64, x0: f64 },
    MonotoneGeometric,
    AlternatingGeometric,
}

/// Initial datum `value` on the open interval `(a, b)`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialData {
    pub value: f64,
    pub a: f64,
    pub b: f64,
}

impl InitialData {
    pub fn block(value: f64, a: f64, b: f64) -> Self {
        Self { value, a, b }
    }

    pub fn zero() -> Self {
        Self::block(0.0, 0.0, 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x > self.a && x < self.b {
            self.value
        } else {
            0.0
        }
    }

    pub fn cell_averages(&self, grid: &Grid) -> Result<CellField> {
        cell_average(|x| self.eval(x), grid, DEFAULT_QUAD_POINTS)
    }
}

/// Model assembled from presets. Geometric coefficients are truncated at the
/// grid spacing, so the concrete model depends on `dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub flux: FluxPreset,
    pub velocity: VelocityPreset,
    pub nu_bar: NuBarPreset,
    pub coefficient: CoefficientPreset,
    /// Kernel support; `None` selects the delta kernel.
    pub epsilon: Option<f64>,
    pub u_bound: Option<f64>,
    pub beta_bound: Option<f64>,
}

impl ModelConfig {
    pub fn build(&self, dx: f64) -> Result<ModelSpec> {
        let flux = match self.flux {
            FluxPreset::Linear => FluxSpec::Linear,
            FluxPreset::Lwr => FluxSpec::Lwr,
        };
        let coefficient = match self.coefficient {
            CoefficientPreset::Constant(k) => RoughCoefficient::constant(k)?,
            CoefficientPreset::Step { left, right, x0 } => RoughCoefficient::step(left, right, x0)?,
            CoefficientPreset::MonotoneGeometric => RoughCoefficient::geometric(GeometricKind::Monotone, dx)?,
            CoefficientPreset::AlternatingGeometric => {
                RoughCoefficient::geometric(GeometricKind::Alternating, dx)?
            }
        };
        let kernel = match self.epsilon {
            Some(eps) => KernelSpec::bump(eps)?,
            None => KernelSpec::Delta,
        };
        let velocity = match self.velocity {
            VelocityPreset::Affine => VelocitySpec::Affine,
        };
        let nu_bar = match self.nu_bar {
            NuBarPreset::Identity => NuBarSpec::Identity,
        };
        ModelSpec::new(flux, velocity, nu_bar, kernel, coefficient)?
            .with_u_bound(self.u_bound)?
            .with_beta_bound(self.beta_bound)
    }
}

/// Everything needed to run one configuration at any resolution.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub initial: InitialData,
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub diagnostics: DiagnosticsOptions,
    /// Turn failed diagnostics into an [`Error::Violation`].
    pub fatal_on_violation: bool,
}

impl ExperimentSetup {
    /// Linear flux, monotone geometric coefficient, `u0 = 0.75` on `(1, 3)`,
    /// window `[0, 4]`, `T = 0.3`, Lax-Friedrichs with `theta = 1/3`, operating
    /// bounds `u <= 1.5` and `s u <= 1`.
    pub fn linear_monotone(epsilon: f64) -> Self {
        Self {
            model: ModelConfig {
                flux: FluxPreset::Linear,
                velocity: VelocityPreset::Affine,
                nu_bar: NuBarPreset::Identity,
                coefficient: CoefficientPreset::MonotoneGeometric,
                epsilon: Some(epsilon),
                u_bound: Some(1.5),
                beta_bound: Some(1.0),
            },
            scheme: SchemeConfig::default(),
            initial: InitialData::block(0.75, 1.0, 3.0),
            x_min: 0.0,
            x_max: 4.0,
            t_final: 0.3,
            snapshot_times: vec![0.0, 0.15, 0.3],
            diagnostics: DiagnosticsOptions::default(),
            fatal_on_violation: true,
        }
    }

    /// Same data with `f(u) = u (1 - u)` and the alternating coefficient.
    pub fn lwr_alternating(epsilon: f64) -> Self {
        let mut s = Self::linear_monotone(epsilon);
        s.model.flux = FluxPreset::Lwr;
        s.model.coefficient = CoefficientPreset::AlternatingGeometric;
        s
    }

    /// Grid with spacing `dx`; the window length must be a multiple of `dx`.
    pub fn grid(&self, dx: f64) -> Result<Grid> {
        let cells = (self.x_max - self.x_min) / dx;
        let n = cells.round();
        if !(dx > 0.0) || (cells - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::config(format!(
                "dx = {dx} does not divide the window [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Grid::new(self.x_min, self.x_max, n as usize)
    }

    /// Widens the window by whole cells when a crude speed estimate says the
    /// support may reach the boundary before `t_final`.
    pub fn widened_for(&self, dx: f64) -> Result<Self> {
        let mut out = self.clone();
        if self.initial.value == 0.0 || self.initial.b <= self.initial.a {
            return Ok(out);
        }
        let model = self.model.build(dx)?;
        let u_top = self.model.u_bound.unwrap_or(self.initial.value.abs());
        let speed = model.coefficient.s_sup()
            * model.flux.lipschitz_on(0.0, model.coefficient.s_sup() * u_top)
            * model.velocity.norms_on(0.0, u_top.max(1.0)).0;
        let reach = speed * self.t_final + self.model.epsilon.unwrap_or(0.0) + 20.0 * dx;
        let lo = self.initial.a - reach;
        let hi = self.initial.b + reach;
        if lo < self.x_min {
            out.x_min -= ((self.x_min - lo) / dx).ceil() * dx;
        }
        if hi > self.x_max {
            out.x_max += ((hi - self.x_max) / dx).ceil() * dx;
        }
        if out.x_min != self.x_min || out.x_max != self.x_max {
            log::warn!(
                "widening window from [{}, {}] to [{}, {}]",
                self.x_min,
                self.x_max,
                out.x_min,
                out.x_max
            );
        }
        Ok(out)
    }
}

/// Profile stored at the first level at or after a requested time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub u: CellField,
}

#[derive(Debug, Clone)]
struct SnapshotRecorder {
    pending: Vec<f64>,
    taken: Vec<Snapshot>,
}

impl SnapshotRecorder {
    fn new(mut times: Vec<f64>) -> Self {
        times.sort_by(|a, b| a.total_cmp(b));
        Self {
            pending: times,
            taken: Vec::new(),
        }
    }

    fn take(&mut self, state: &RunState) {
        while let Some(&t) = self.pending.first() {
            if state.t >= t - 1e-12 * t.abs().max(1.0) {
                self.taken.push(Snapshot {
                    requested: t,
                    t: state.t,
                    u: state.u.clone(),
                });
                self.pending.remove(0);
            } else {
                break;
            }
        }
    }
}

impl StepObserver for SnapshotRecorder {
    fn on_start(&mut self, state: &RunState) -> Result<()> {
        self.take(state);
        Ok(())
    }

    fn on_step(&mut self, _prev: &RunState, next: &RunState, _faces: &FaceField) -> Result<()> {
        self.take(next);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dx: f64,
    pub grid: Grid,
    pub u0: CellField,
    pub state: RunState,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub report: Option<DiagnosticsReport>,
}

/// Runs `setup` at spacing `dx` and enforces the diagnostics when requested.
pub fn simulate(setup: &ExperimentSetup, dx: f64) -> Result<RunResult> {
    let setup = setup.widened_for(dx)?;
    let grid = setup.grid(dx)?;
    let model = setup.model.build(dx)?;
    let u0 = setup.initial.cell_averages(&grid)?;
    let mut snaps = SnapshotRecorder::new(setup.snapshot_times.clone());
    let options = RunOptions {
        diagnostics: Some(setup.diagnostics.clone()),
        boundary_tolerance: setup.diagnostics.boundary_tolerance,
        ..RunOptions::default()
    };
    let out = run(&model, &grid, &setup.scheme, &u0, setup.t_final, &options, &mut [&mut snaps])?;
    if setup.fatal_on_violation {
        if let Some(r) = &out.report {
            r.ensure_ok()?;
        }
    }
    Ok(RunResult {
        dx,
        grid,
        u0,
        state: out.state,
        dt: out.dt,
        snapshots: snaps.taken,
        report: out.report,
    })
}

fn check_decreasing(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !(*v > 0.0)) || values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config(format!("{what} must be positive and strictly decreasing")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RefinementRow {
    pub dx: f64,
    /// `||u_dx - u_{dx/2}||_{L1}` on the coarser grid; `None` for the finest level.
    pub cauchy_l1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RefinementTable {
    pub rows: Vec<RefinementRow>,
    pub runs: Vec<RunResult>,
}

impl RefinementTable {
    pub fn cauchy_differences(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.cauchy_l1).collect()
    }
}

/// Runs every resolution and reports successive Cauchy differences at `t_final`.
pub fn refinement_study(setup: &ExperimentSetup, dx_list: &[f64]) -> Result<RefinementTable> {
    check_decreasing(dx_list, "dx_list")?;
    let runs = dx_list
        .par_iter()
        .map(|&dx| simulate(setup, dx))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(runs.len());
    for (k, r) in runs.iter().enumerate() {
        let cauchy_l1 = match runs.get(k + 1) {
            Some(next) => Some(l1_distance(&r.state.u, &next.state.u)?),
            None => None,
        };
        rows.push(RefinementRow { dx: r.dx, cauchy_l1 });
    }
    Ok(RefinementTable { rows, runs })
}

#[derive(Debug, Clone)]
pub struct LimitTable {
    /// `(epsilon, e_eps)` in input order.
    pub rows: Vec<(f64, f64)>,
    pub reference: RunResult,
    pub runs: Vec<RunResult>,
}

/// Nonlocal runs for each kernel support against the local reference
/// (delta kernel, Godunov flux) on the same grid.
pub fn nonlocal_to_local_study(setup: &ExperimentSetup, eps_list: &[f64], dx: f64) -> Result<LimitTable> {
    check_decreasing(eps_list, "eps_list")?;
    let mut local = setup.clone();
    local.model.epsilon = None;
    local.scheme = SchemeConfig {
        flux_kind: FluxKind::Godunov,
        local_mode: true,
        ..setup.scheme
    };
    let (reference, runs) = rayon::join(
        || simulate(&local, dx),
        || {
            eps_list
                .par_iter()
                .map(|&eps| {
                    let mut s = setup.clone();
                    s.model.epsilon = Some(eps);
                    simulate(&s, dx)
                })
                .collect::<Result<Vec<_>>>()
        },
    );
    let (reference, runs) = (reference?, runs?);
    let rows = eps_list
        .iter()
        .zip(&runs)
        .map(|(&eps, r)| Ok((eps, l1_distance(&reference.state.u, &r.state.u)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitTable {
        rows,
        reference,
        runs,
    })
}

#[derive(Debug, Clone)]
pub struct CrossValidationTable {
    /// `(dx, ||u_LF - u_God||_{L1})` in input order.
    pub rows: Vec<(f64, f64)>,
}

/// L1 distance between the Lax-Friedrichs and Godunov solutions per `dx`.
pub fn scheme_cross_validation(setup: &ExperimentSetup, dx_list: &[f64]) -> Result<CrossValidationTable> {
    check_decreasing(dx_list, "dx_list")?;
    let rows = dx_list
        .par_iter()
        .map(|&dx| {
            let mut lf = setup.clone();
            lf.scheme.flux_kind = FluxKind::LaxFriedrichs;
            let mut god = setup.clone();
            god.scheme.flux_kind = FluxKind::Godunov;
            let (a, b) = rayon::join(|| simulate(&lf, dx), || simulate(&god, dx));
            Ok((dx, l1_distance(&a?.state.u, &b?.state.u)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossValidationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let g = Grid::new(0.0, 4.0, 8).unwrap();
        let a = CellField::constant(g, 1.0);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &CellField::zeros(g)).unwrap(), 4.0);
        let fine = CellField::constant(Grid::new(0.0, 4.0, 32).unwrap(), 0.3);
        assert_eq!(l1_distance(&fine, &CellField::constant(g, 0.3)).unwrap(), 0.0);
        let odd = CellField::zeros(Grid::new(0.0, 4.0, 12).unwrap());
        assert!(matches!(l1_distance(&odd, &a), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_data_gives_zero_tables() {
        let mut setup = ExperimentSetup::linear_monotone(0.1);
        setup.initial = InitialData::zero();
        setup.t_final = 0.05;
        let t = refinement_study(&setup, &[1.0 / 20.0, 1.0 / 40.0]).unwrap();
        assert_eq!(t.cauchy_differences(), vec![0.0]);
        let c = scheme_cross_validation(&setup, &[1.0 / 20.0, 1.0 / 40.0]).unwrap();
        assert!(c.rows.iter().all(|&(_, d)| d == 0.0));
        let mut wide = setup.clone();
        wide.model.epsilon = Some(10.0);
        let l = nonlocal_to_local_study(&wide, &[10.0], 1.0 / 20.0).unwrap();
        assert_eq!(l.rows, vec![(10.0, 0.0)]);
    }

    #[test]
    fn snapshots_land_at_or_after_requested_times() {
        let mut setup = ExperimentSetup::linear_monotone(0.1);
        setup.t_final = 0.05;
        setup.snapshot_times = vec![0.0, 0.021, 0.05];
        let r = simulate(&setup, 1.0 / 50.0).unwrap();
        assert_eq!(r.snapshots.len(), 3);
        assert_eq!(r.snapshots[0].t, 0.0);
        assert!(r.snapshots[1].t >= 0.021 && r.snapshots[1].t < 0.021 + r.dt);
        assert_eq!(r.snapshots[2].t, 0.05);
    }

    #[test]
    fn window_is_widened_when_support_is_close_to_the_edge() {
        let mut setup = ExperimentSetup::linear_monotone(0.1);
        setup.initial = InitialData::block(0.75, 3.0, 3.9);
        let w = setup.widened_for(0.05).unwrap();
        assert_eq!(w.x_min, 0.0);
        assert!(w.x_max > 4.0);
        let cells = (w.x_max - w.x_min) / 0.05;
        assert!((cells - cells.round()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn projection_is_contractive(
            a in proptest::collection::vec(-1.0f64..1.0, 24),
            b in proptest::collection::vec(-1.0f64..1.0, 24),
        ) {
            let fine = Grid::new(0.0, 1.0, 24).unwrap();
            let coarse = Grid::new(0.0, 1.0, 6).unwrap();
            let a = CellField::new(fine, a).unwrap();
            let b = CellField::new(fine, b).unwrap();
            let d_fine = l1_distance(&a, &b).unwrap();
            let d_coarse = l1_distance(&project(&a, &coarse).unwrap(), &project(&b, &coarse).unwrap()).unwrap();
            prop_assert!(d_coarse <= d_fine + 1e-15);
        }
    }
}
