use std::path::Path;
use std::process::{Command, Output};

use roughflow::cli_io::{read_solution_csv, write_solution_csv};
use roughflow::experiments::ExperimentSetup;
use roughflow::scheme::Simulation;
use roughflow::RunState;

fn roughflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn passing_run_writes_outputs_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/run");
    let o = roughflow(&["run", "--preset", "linear-monotone", "--n-cells", "300", "--output-dir", &dir_arg(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["solution_t0.0000.csv", "solution_t0.1500.csv", "solution_t0.3000.csv", "report.txt", "plot.gp", "steps.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("all_ok = true"));
    assert!(!report.contains("= false"));
    let last = read_solution_csv(&out.join("solution_t0.3000.csv")).unwrap();
    assert_eq!(last.grid().n_cells(), 300);
    assert!((last.mass() - 1.5).abs() < 1e-12);
}

#[test]
fn limit_and_refine_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_arg(tmp.path());
    let o = roughflow(&[
        "limit", "--preset", "linear-monotone", "--n-cells", "300", "--output-dir", &out,
        "--set", "experiment.eps_list=0.2, 0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("e_eps.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("epsilon,e_l1"));
    assert_eq!(table.lines().count(), 3);
    let o = roughflow(&[
        "refine", "--preset", "linear-monotone", "--output-dir", &out,
        "--set", "experiment.dx_list=1/75, 1/150",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("refinement.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("dx,cauchy_l1"));
}

#[test]
fn usage_and_configuration_errors_exit_one() {
    let o = roughflow(&["run"]);
    assert_eq!(code(&o), 1);
    let o = roughflow(&["run", "--preset", "nonexistent"]);
    assert_eq!(code(&o), 1);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[model]\nflux = linear\nspeed = 3\n").unwrap();
    let o = roughflow(&["run", "--config", &dir_arg(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = roughflow(&["run", "--preset", "linear-monotone", "--set", "scheme.theta_lf=0.9", "--output-dir", &dir_arg(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("theta_lf"), "{}", stderr(&o));
}

#[test]
fn failed_diagnostics_are_fatal_only_when_requested() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_arg(tmp.path());
    // the Godunov solution of this configuration peaks above 1.1 at dx = 1/150
    let args = [
        "run", "--preset", "lwr-alternating", "--flux-kind", "godunov", "--n-cells", "600",
        "--set", "model.u_bound=1.1", "--output-dir", &out,
    ];
    let o = roughflow(&args);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let mut lenient = args.to_vec();
    lenient.extend(["--set", "diagnostics.fatal_on_violation=false"]);
    let o = roughflow(&lenient);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("operating_range_ok = false"));
}

#[test]
fn validate_accepts_a_scheme_step_and_rejects_a_corrupted_one() {
    let tmp = tempfile::tempdir().unwrap();
    let setup = ExperimentSetup::linear_monotone(0.1);
    let dx = 1.0 / 150.0;
    let grid = setup.grid(dx).unwrap();
    let model = setup.model.build(dx).unwrap();
    let u0 = setup.initial.cell_averages(&grid).unwrap();
    let sim = Simulation::new(&model, &grid, &setup.scheme, &u0, setup.t_final).unwrap();
    let next = sim.stepper.step(&RunState::new(sim.stepper.model(), u0.clone(), sim.dt)).unwrap().0;
    let (prev_path, next_path, bad_path) = (tmp.path().join("p.csv"), tmp.path().join("n.csv"), tmp.path().join("b.csv"));
    write_solution_csv(&u0, &prev_path).unwrap();
    write_solution_csv(&next.u, &next_path).unwrap();
    let mut bad = next.u.clone();
    bad.values_mut()[300] = -0.01;
    write_solution_csv(&bad, &bad_path).unwrap();
    let dt = format!("{:e}", sim.dt);
    let out = dir_arg(tmp.path());
    let run = |n: &Path| {
        roughflow(&[
            "validate", "--preset", "linear-monotone", "--n-cells", "600", "--output-dir", &out,
            "--prev", &dir_arg(&prev_path), "--next", &dir_arg(n), "--dt", &dt,
        ])
    };
    let o = run(&next_path);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&bad_path);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(tmp.path().join("validate.txt").exists());
}

#[test]
fn print_config_round_trips_through_a_file() {
    let o = roughflow(&["run", "--preset", "lwr-alternating", "--epsilon", "0.05", "--print-config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("epsilon = 0.05"));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, &text).unwrap();
    let again = roughflow(&["run", "--config", &dir_arg(&cfg), "--print-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}
