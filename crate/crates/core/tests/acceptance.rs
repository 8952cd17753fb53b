//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roughflow::diagnostics::{check_convolution_bounds, compute_constants, CUMULATIVE_MASS_TOL, ENVELOPE_TOL, EXACT_TOL};
use roughflow::experiments::{
    nonlocal_to_local_study, refinement_study, scheme_cross_validation, simulate, CoefficientPreset,
    ExperimentSetup, FluxPreset, InitialData,
};
use roughflow::model::operating_bounds;
use roughflow::scheme::compute_timestep;
use roughflow::{
    CellField, FluxKind, FluxSpec, Grid, KernelSpec, ModelSpec, NuBarSpec, RoughCoefficient, RunState,
    SchemeConfig, VelocitySpec,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fluxes() -> [FluxKind; 2] {
    [FluxKind::LaxFriedrichs, FluxKind::Godunov]
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn table_reproduction() -> Outcome {
    let setup = ExperimentSetup::linear_monotone(0.1);
    let eps = [0.1, 0.05, 0.025, 0.01];
    let expected = [0.1031, 0.0685, 0.0390, 0.0257];
    let table = nonlocal_to_local_study(&setup, &eps, 1.0 / 600.0).map_err(|e| e.to_string())?;
    let got: Vec<f64> = table.rows.iter().map(|r| r.1).collect();
    let within = got.iter().zip(expected).all(|(g, e)| ((g - e) / e).abs() <= 0.2);
    check(
        within && strictly_decreasing(&got),
        format!("e_eps = [{}] against [{}]", fmt_list(&got), fmt_list(&expected)),
    )
}

fn stationarity() -> Outcome {
    for setup in [ExperimentSetup::linear_monotone(0.1), ExperimentSetup::lwr_alternating(0.1)] {
        let dx = 1.0 / 150.0;
        let grid = setup.grid(dx).map_err(|e| e.to_string())?;
        let model = setup.model.build(dx).map_err(|e| e.to_string())?;
        let u0 = CellField::zeros(grid);
        for kind in fluxes() {
            let config = SchemeConfig {
                flux_kind: kind,
                ..setup.scheme
            };
            let bounds = operating_bounds(&model, &u0, 1.0).map_err(|e| e.to_string())?;
            let dt = compute_timestep(&config, &model, &grid, &bounds).map_err(|e| e.to_string())?;
            let stepper = roughflow::scheme::Stepper::new(&model, &config, &grid).map_err(|e| e.to_string())?;
            let mut state = RunState::new(&model, u0.clone(), dt);
            for _ in 0..1000 {
                state = stepper.step(&state).map_err(|e| e.to_string())?.0;
                if let Some(i) = state.u.values().iter().position(|v| v.to_bits() != 0) {
                    return Err(format!("{} step {}: u[{i}] = {:e}", kind.name(), state.n, state.u.values()[i]));
                }
            }
        }
    }
    Ok("1000 steps bitwise zero for both fluxes and both flux functions".into())
}

fn linear_run(kind: FluxKind, dx: f64) -> Result<roughflow::experiments::RunResult, String> {
    let mut setup = ExperimentSetup::linear_monotone(0.1);
    setup.scheme.flux_kind = kind;
    setup.fatal_on_violation = false;
    setup.diagnostics.keep_records = true;
    setup.diagnostics.alpha_count = 9;
    simulate(&setup, dx).map_err(|e| e.to_string())
}

fn positivity_and_mass() -> Outcome {
    let r = linear_run(FluxKind::LaxFriedrichs, 1.0 / 150.0)?;
    let rep = r.report.ok_or("no diagnostics")?;
    let min_u = rep.records.iter().map(|r| r.min_u).fold(f64::INFINITY, f64::min);
    let drift = rep.records.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
    check(
        rep.records.len() as u64 == rep.steps
            && min_u >= -EXACT_TOL
            && drift <= EXACT_TOL
            && rep.cumulative_mass_drift <= CUMULATIVE_MASS_TOL,
        format!(
            "{} steps, min u = {min_u:.3e}, max step drift = {drift:.3e}, cumulative drift = {:.3e}",
            rep.steps, rep.cumulative_mass_drift
        ),
    )
}

fn entropy_inequality() -> Outcome {
    let mut worst = Vec::new();
    let mut ok = true;
    for kind in fluxes() {
        let r = linear_run(kind, 1.0 / 150.0)?;
        let rep = r.report.ok_or("no diagnostics")?;
        let max = rep.records.iter().map(|r| r.entropy_violation_max).fold(0.0, f64::max);
        ok &= rep.records.len() as u64 == rep.steps && max <= EXACT_TOL;
        worst.push(format!("{}: max residual {max:.3e}", kind.name()));
    }
    check(ok, worst.join(", "))
}

fn invariant_region() -> Outcome {
    let mut setup = ExperimentSetup::linear_monotone(0.1);
    setup.model.flux = FluxPreset::Lwr;
    setup.model.coefficient = CoefficientPreset::Constant(1.2);
    setup.model.u_bound = None;
    setup.model.beta_bound = None;
    setup.initial = InitialData::block(0.75, 1.0, 3.0);
    setup.fatal_on_violation = false;
    let mut ranges = Vec::new();
    let mut ok = true;
    for kind in fluxes() {
        setup.scheme.flux_kind = kind;
        let r = simulate(&setup, 1.0 / 300.0).map_err(|e| e.to_string())?;
        let rep = r.report.ok_or("no diagnostics")?;
        ok &= rep.u_min >= -EXACT_TOL && rep.u_max <= 1.0 + EXACT_TOL;
        ranges.push(format!("{}: [{:.3e}, {:.6}]", kind.name(), rep.u_min, rep.u_max));
    }
    check(ok, ranges.join(", "))
}

fn envelope_bounds() -> Outcome {
    let mut ok = true;
    let mut worst_linf: f64 = 0.0;
    let mut worst_bv: f64 = 0.0;
    let mut runs = 0;
    for base in [ExperimentSetup::linear_monotone(0.1), ExperimentSetup::lwr_alternating(0.1)] {
        for kind in fluxes() {
            let mut setup = base.clone();
            setup.scheme.flux_kind = kind;
            setup.fatal_on_violation = false;
            let r = simulate(&setup, 1.0 / 150.0).map_err(|e| e.to_string())?;
            let rep = r.report.ok_or("no diagnostics")?;
            ok &= rep.records.len() as u64 == rep.steps;
            for rec in &rep.records {
                let linf = rec.max_u.abs().max(rec.min_u.abs());
                worst_linf = worst_linf.max(linf / rec.linf_bound);
                worst_bv = worst_bv.max(rec.tv_u / rec.bv_bound);
                ok &= linf <= rec.linf_bound * (1.0 + ENVELOPE_TOL) && rec.tv_u <= rec.bv_bound * (1.0 + ENVELOPE_TOL);
            }
            runs += 1;
        }
    }
    check(
        ok,
        format!("{runs} runs, max ||u||_inf / bound = {worst_linf:.4}, max TV / bound = {worst_bv:.3e}"),
    )
}

fn convolution_bounds() -> Outcome {
    let dx = 1.0 / 300.0;
    let mut setup = ExperimentSetup::linear_monotone(0.1);
    setup.model.u_bound = None;
    setup.model.beta_bound = None;
    let grid = setup.grid(dx).map_err(|e| e.to_string())?;
    let model = setup.model.build(dx).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let n = grid.n_cells();
        let values: Vec<f64> = match k % 3 {
            0 => (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
            1 => {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(a..n);
                let h = rng.gen_range(0.0..3.0);
                (0..n).map(|i| if (a..=b).contains(&i) { h } else { 0.0 }).collect()
            }
            _ => (0..n)
                .map(|_| if rng.gen_bool(0.1) { rng.gen_range(0.0..5.0) } else { 0.0 })
                .collect(),
        };
        let u = CellField::new(grid, values).map_err(|e| e.to_string())?;
        let bounds = operating_bounds(&model, &u, 0.0).map_err(|e| e.to_string())?;
        let constants = compute_constants(&model, &u, &bounds);
        let stepper =
            roughflow::scheme::Stepper::new(&model, &setup.scheme, &grid).map_err(|e| e.to_string())?;
        let c = stepper.faces(&u).map_err(|e| e.to_string())?;
        let (m1, m2) = check_convolution_bounds(&c, &constants, dx);
        first = first.max(m1);
        second = second.max(m2);
    }
    check(
        first <= 1.0 + ENVELOPE_TOL && second <= 1.0 + ENVELOPE_TOL,
        format!("100 fields, max first margin = {first:.4}, max second margin = {second:.4}"),
    )
}

fn cauchy_refinement() -> Outcome {
    let setup = ExperimentSetup::linear_monotone(0.1);
    let t = refinement_study(&setup, &[1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0, 1.0 / 600.0])
        .map_err(|e| e.to_string())?;
    let d = t.cauchy_differences();
    check(d.len() == 3 && strictly_decreasing(&d), format!("Cauchy L1 differences [{}]", fmt_list(&d)))
}

fn cross_validation() -> Outcome {
    let setup = ExperimentSetup::linear_monotone(0.1);
    let t = scheme_cross_validation(&setup, &[1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0]).map_err(|e| e.to_string())?;
    let d: Vec<f64> = t.rows.iter().map(|r| r.1).collect();
    check(strictly_decreasing(&d), format!("LF-Godunov L1 distances [{}]", fmt_list(&d)))
}

/// Straight-line reference: full-lattice convolution, explicit fluxes.
mod reference {
    pub const EPS: f64 = 0.1;
    pub const THETA_FACE: f64 = 0.5;
    pub const THETA_LF: f64 = 1.0 / 3.0;

    fn mu(x: f64) -> f64 {
        if x.abs() >= EPS {
            return 0.0;
        }
        35.0 / (32.0 * EPS.powi(7)) * (EPS * EPS - x * x).powi(3)
    }

    fn f(lwr: bool, b: f64) -> f64 {
        if lwr {
            b * (1.0 - b)
        } else {
            b
        }
    }

    fn godunov(lwr: bool, a: f64, b: f64) -> f64 {
        if !lwr {
            return a;
        }
        if a <= b {
            f(lwr, a).min(f(lwr, b))
        } else if b <= 0.5 && a >= 0.5 {
            0.25
        } else {
            f(lwr, a).max(f(lwr, b))
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(u: &[f64], s: &[f64], s_left: f64, s_right: f64, dx: f64, dt: f64, lwr: bool, godunov_flux: bool) -> Vec<f64> {
        let n = u.len() as i64;
        let at = |i: i64| if i < 0 || i >= n { 0.0 } else { u[i as usize] };
        let s_at = |i: i64| {
            if i < 0 {
                s_left
            } else if i >= n {
                s_right
            } else {
                s[i as usize]
            }
        };
        let lambda = dt / dx;
        let mut flux = vec![0.0; n as usize + 1];
        for j in 0..=n {
            let mut c = 0.0;
            for p in -n - 10..2 * n + 10 {
                let w = (1.0 - THETA_FACE) * at(p) + THETA_FACE * at(p + 1);
                c += mu((j as f64 - 0.5 - p as f64) * dx) * w;
            }
            c *= dx;
            let nu = 1.0 - c;
            let bl = s_at(j - 1) * at(j - 1);
            let br = s_at(j) * at(j);
            flux[j as usize] = if godunov_flux {
                nu * godunov(lwr, bl, br)
            } else {
                0.5 * nu * (f(lwr, bl) + f(lwr, br)) - THETA_LF / (2.0 * lambda) * (br - bl)
            };
        }
        (0..n as usize).map(|i| u[i] - lambda * (flux[i + 1] - flux[i])).collect()
    }
}

fn oracle_equivalence() -> Outcome {
    let grid = Grid::new(0.0, 1.0, 16).map_err(|e| e.to_string())?;
    let dx = grid.dx();
    let dt = 0.1 * dx;
    let (s_left, s_right, x0) = (1.0, 1.4, 0.53);
    let coefficient = RoughCoefficient::step(s_left, s_right, x0).map_err(|e| e.to_string())?;
    let s: Vec<f64> = grid.centers().map(|x| if x < x0 { s_left } else { s_right }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u0: Vec<f64> = (0..16).map(|_| rng.gen_range(0.2..0.8)).collect();
    let mut worst: f64 = 0.0;
    for lwr in [false, true] {
        let flux = if lwr { FluxSpec::Lwr } else { FluxSpec::Linear };
        let model = ModelSpec::new(
            flux,
            VelocitySpec::Affine,
            NuBarSpec::Identity,
            KernelSpec::bump(reference::EPS).map_err(|e| e.to_string())?,
            coefficient.clone(),
        )
        .map_err(|e| e.to_string())?;
        for kind in fluxes() {
            let config = SchemeConfig {
                flux_kind: kind,
                theta_lf: reference::THETA_LF,
                theta_face: reference::THETA_FACE,
                ..SchemeConfig::default()
            };
            let stepper = roughflow::scheme::Stepper::new(&model, &config, &grid).map_err(|e| e.to_string())?;
            let mut state =
                RunState::new(&model, CellField::new(grid, u0.clone()).map_err(|e| e.to_string())?, dt);
            let mut naive = u0.clone();
            for _ in 0..3 {
                state = stepper.step_with_dt(&state, dt).map_err(|e| e.to_string())?.0;
                naive = reference::step(&naive, &s, s_left, s_right, dx, dt, lwr, kind == FluxKind::Godunov);
                for (a, b) in state.u.values().iter().zip(&naive) {
                    let rel = if *b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
                    worst = worst.max(rel);
                }
            }
        }
    }
    check(worst <= 1e-14, format!("max relative cell difference {worst:.3e} over 4 cases x 3 steps"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("kernel-support table reproduction", table_reproduction),
        ("stationarity of zero data", stationarity),
        ("positivity and exact mass", positivity_and_mass),
        ("discrete entropy inequality", entropy_inequality),
        ("invariant region", invariant_region),
        ("envelope bounds", envelope_bounds),
        ("convolution bounds", convolution_bounds),
        ("Cauchy refinement", cauchy_refinement),
        ("scheme cross-validation", cross_validation),
        ("oracle equivalence", oracle_equivalence),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {}: {name}: {d} ({secs:.1} s)", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {d} ({secs:.1} s)", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
