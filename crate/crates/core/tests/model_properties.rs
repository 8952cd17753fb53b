use proptest::prelude::*;

use roughflow::diagnostics::compute_constants;
use roughflow::experiments::ExperimentSetup;
use roughflow::model::{kernel_normalization, operating_bounds, sample_coefficient, GeometricKind};
use roughflow::{CellField, FluxSpec, Grid, KernelSpec, ModelSpec, NuBarSpec, RoughCoefficient, VelocitySpec};

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

#[test]
fn normalization_examples() {
    assert_eq!(kernel_normalization(1.0).unwrap(), 1.09375);
    let l = kernel_normalization(0.1).unwrap();
    assert!((l - 1.09375e7).abs() <= 1e-15 * 1.09375e7);
    assert!(kernel_normalization(0.0).is_err());
    assert!(kernel_normalization(-1.0).is_err());
}

#[test]
fn kernel_has_unit_mass_and_is_symmetric() {
    for eps in [0.05, 0.1, 1.0] {
        let k = KernelSpec::bump(eps).unwrap();
        let mass = trapezoid(|x| k.mu(x), -eps, eps, 10_000);
        assert!((mass - 1.0).abs() <= 1e-10, "eps = {eps}: mass {mass}");
        for j in 0..=200 {
            let x = eps * (j as f64 / 100.0 - 1.0) * 1.1;
            assert!(k.mu(x) >= 0.0);
            assert_eq!(k.mu(x), k.mu(-x));
        }
    }
}

#[test]
fn kernel_derivative_sup_matches_closed_form() {
    // |mu'| = 6 L |x| (eps^2 - x^2)^2 peaks at x = eps / sqrt(5)
    for eps in [0.01, 0.1, 0.7] {
        let k = KernelSpec::bump(eps).unwrap();
        let expected = 4.2 / (5f64.sqrt() * eps * eps);
        let got = k.mu_prime_sup();
        assert!((got - expected).abs() <= 1e-12 * expected, "eps = {eps}: {got} vs {expected}");
    }
}

#[test]
fn monotone_coefficient_examples() {
    let s = RoughCoefficient::geometric(GeometricKind::Monotone, 1.0 / 600.0).unwrap();
    assert!((s.eval(0.3) - 0.2).abs() < 1e-15);
    assert!((s.eval(0.0) - 0.2).abs() < 1e-15);
    assert_eq!(s.eval(3.5), 1.0);
    assert_eq!(s.eval(4.0), 1.0);
    let b = s.breakpoints();
    // s = a_1 / 3 continues up to a_2, so the first jump sits at a_2 = 1.08
    assert!((b[0] - 1.08).abs() < 1e-14);
    assert!((s.eval(1.0) - 0.2).abs() < 1e-15);
    assert!(b.windows(2).all(|w| w[1] - w[0] >= 1.0 / 600.0));
    let jumps: f64 = s.values().windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    assert!((s.bv_seminorm() - jumps).abs() < 1e-14);
    assert!(s.bv_seminorm() <= 0.8 + 1e-12);
    let sampled = sample_coefficient(&s, &Grid::new(0.0, 4.0, 2400).unwrap());
    assert!(sampled.values().windows(2).all(|w| w[1] >= w[0]));
    let grid = Grid::new(0.0, 4.0, 4).unwrap();
    let coarse = sample_coefficient(&s, &grid);
    assert_eq!(coarse.values(), &[s.eval(0.5), s.eval(1.5), s.eval(2.5), 1.0]);
    // a_n = 3 (1 - 0.8^n): 0.5 lies below a_1, 1.5 in [a_3, a_4), 2.5 in [a_8, a_9)
    assert!((coarse.values()[0] - 0.2).abs() < 1e-15);
    assert!((coarse.values()[1] - (1.0 - 0.8f64.powi(3))).abs() < 1e-15);
    assert!((coarse.values()[2] - (1.0 - 0.8f64.powi(8))).abs() < 1e-15);
}

#[test]
fn alternating_coefficient_is_positive_and_bounded() {
    let s = RoughCoefficient::geometric(GeometricKind::Alternating, 1.0 / 600.0).unwrap();
    assert!(s.s_inf() > 0.0);
    assert!(s.bv_seminorm().is_finite());
    assert_eq!(s.eval(3.5), 1.0);
    let sampled = sample_coefficient(&s, &Grid::new(0.0, 4.0, 2400).unwrap());
    assert!(sampled.values().iter().all(|v| *v > 0.0 && *v <= 1.0));
}

#[test]
fn sampling_examples() {
    let grid = Grid::new(0.0, 4.0, 4).unwrap();
    let one = sample_coefficient(&RoughCoefficient::constant(1.0).unwrap(), &grid);
    assert_eq!(one.values(), &[1.0; 4]);
    let step = sample_coefficient(&RoughCoefficient::step(1.0, 2.0, 2.0).unwrap(), &grid);
    assert_eq!(step.values(), &[1.0, 1.0, 2.0, 2.0]);
    assert!(RoughCoefficient::constant(0.0).is_err());
    assert!(RoughCoefficient::step(1.0, -1.0, 0.0).is_err());
}

fn linear_model(s: RoughCoefficient, flux: FluxSpec) -> ModelSpec {
    ModelSpec::new(flux, VelocitySpec::Affine, NuBarSpec::Identity, KernelSpec::bump(0.1).unwrap(), s).unwrap()
}

#[test]
fn operating_bounds_examples() {
    let grid = Grid::new(0.0, 4.0, 400).unwrap();
    let u0 = CellField::new(grid, grid.centers().map(|x| if (1.0..3.0).contains(&x) { 0.75 } else { 0.0 }).collect()).unwrap();
    let zero_flux = linear_model(RoughCoefficient::step(1.0, 2.0, 2.0).unwrap(), FluxSpec::custom("zero", |_| 0.0));
    let b = operating_bounds(&zero_flux, &u0, 1.0).unwrap();
    assert_eq!(b.k3, 0.0);
    assert_eq!(b.k4, 2.0);
    assert_eq!(b.u_envelope, 2.0 * 0.75);
    let unit = linear_model(RoughCoefficient::constant(1.0).unwrap(), FluxSpec::Linear);
    assert_eq!(operating_bounds(&unit, &u0, 1.0).unwrap().k4, 1.0);

    let setup = ExperimentSetup::linear_monotone(0.1);
    let dx = 1.0 / 600.0;
    let grid = setup.grid(dx).unwrap();
    let model = setup.model.build(dx).unwrap();
    let u0 = setup.initial.cell_averages(&grid).unwrap();
    assert!((u0.norm(roughflow::NormKind::L1) - 1.5).abs() < 1e-12);
    let b = operating_bounds(&model, &u0, 0.3).unwrap();
    let mass = model.kernel.discrete_mass(dx);
    assert!((mass - 1.0).abs() < 1e-6);
    assert!(b.c_max <= f64::min(35.0 / (32.0 * 0.1) * 1.5, b.u_max * mass.max(1.0)) * (1.0 + 1e-15));
    assert!(b.c_max.is_finite() && b.nu_sup.is_finite() && b.nu_prime_sup.is_finite());
}

#[test]
fn first_convolution_constant_for_the_reference_configuration() {
    let setup = ExperimentSetup::linear_monotone(0.1);
    let dx = 1.0 / 600.0;
    let grid = setup.grid(dx).unwrap();
    let model = setup.model.build(dx).unwrap();
    let u0 = setup.initial.cell_averages(&grid).unwrap();
    let b = operating_bounds(&model, &u0, 0.3).unwrap();
    let c = compute_constants(&model, &u0, &b);
    let mu_prime = 4.2 / (5f64.sqrt() * 0.01);
    assert!((c.k1 - 1.5 * mu_prime).abs() <= 1e-12 * c.k1, "K1 = {}", c.k1);
    assert!(c.k1 > 0.0 && c.k2 > 0.0 && c.k3 > 0.0 && c.k5 > 0.0 && c.k6 > 0.0);
    assert!((c.k4 - 5.0).abs() < 1e-14);
}

#[test]
fn zero_flux_and_unit_coefficient_constants() {
    let grid = Grid::new(0.0, 4.0, 400).unwrap();
    let u0 = CellField::new(grid, grid.centers().map(|x| if (1.0..3.0).contains(&x) { 0.5 } else { 0.0 }).collect()).unwrap();
    let zero = linear_model(RoughCoefficient::step(1.0, 1.5, 2.0).unwrap(), FluxSpec::custom("zero", |_| 0.0));
    let c = compute_constants(&zero, &u0, &operating_bounds(&zero, &u0, 1.0).unwrap());
    assert_eq!((c.k3, c.k5), (0.0, 0.0));
    let unit = linear_model(RoughCoefficient::constant(1.0).unwrap(), FluxSpec::Linear);
    let c = compute_constants(&unit, &u0, &operating_bounds(&unit, &u0, 1.0).unwrap());
    assert_eq!(c.k4, 1.0);
    assert_eq!(c.s_bv, 0.0);
}

proptest! {
    #[test]
    fn larger_horizon_never_shrinks_the_envelope(
        left in 0.3f64..2.0,
        right in 0.3f64..2.0,
        height in 0.1f64..1.5,
        t1 in 0.0f64..1.0,
        dt in 0.0f64..1.0,
        lwr in any::<bool>(),
    ) {
        let grid = Grid::new(0.0, 4.0, 200).unwrap();
        let u0 = CellField::new(grid, grid.centers().map(|x| if (1.0..2.5).contains(&x) { height } else { 0.0 }).collect()).unwrap();
        let flux = if lwr { FluxSpec::Lwr } else { FluxSpec::Linear };
        let model = linear_model(RoughCoefficient::step(left, right, 2.0).unwrap(), flux);
        let a = operating_bounds(&model, &u0, t1);
        let b = operating_bounds(&model, &u0, t1 + dt);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!(b.u_max >= a.u_max);
            prop_assert!(b.u_envelope >= a.u_envelope);
        }
    }

    #[test]
    fn constructed_coefficients_satisfy_positivity(
        left in 0.01f64..5.0,
        right in 0.01f64..5.0,
        x0 in -3.0f64..3.0,
        dx in 1e-4f64..0.5,
    ) {
        let s = RoughCoefficient::step(left, right, x0).unwrap();
        prop_assert!(s.s_inf() > 0.0 && s.bv_seminorm().is_finite());
        prop_assert!((s.bv_seminorm() - (left - right).abs()).abs() < 1e-14);
        for kind in [GeometricKind::Monotone, GeometricKind::Alternating] {
            let g = RoughCoefficient::geometric(kind, dx).unwrap();
            prop_assert!(g.s_inf() > 0.0 && g.bv_seminorm().is_finite());
        }
    }
}
