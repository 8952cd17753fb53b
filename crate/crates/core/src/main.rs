use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roughflow::cli_io::{
    apply_override, config_from_entries, parse_entries, read_solution_csv, render_config, solution_file_name,
    steps_table, validate_pair, write_report, write_solution_csv, RunConfig, Table,
};
use roughflow::experiments::{nonlocal_to_local_study, refinement_study, scheme_cross_validation, simulate};
use roughflow::{Error, Result};

#[derive(Parser)]
#[command(name = "roughflow", version, about = "Finite-volume solver for nonlocal conservation laws with rough coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single simulation with snapshots and diagnostics.
    Run(Common),
    /// Mesh refinement study over `experiment.dx_list`.
    Refine(Common),
    /// Kernel-support sweep against the local reference over `experiment.eps_list`.
    Limit(Common),
    /// Lax-Friedrichs against Godunov over `experiment.dx_list`.
    Crossval(Common),
    /// Checks a stored solution pair `(u^n, u^{n+1})` against the scheme.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        /// Step size used between the two levels (default: the admissible one).
        #[arg(long)]
        dt: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration (`linear-monotone`, `lwr-alternating`) used without `--config`.
    #[arg(long)]
    preset: Option<String>,
    /// Override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    t_final: Option<String>,
    #[arg(long)]
    n_cells: Option<String>,
    #[arg(long)]
    flux_kind: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let text = match (&self.config, &self.preset) {
            (Some(path), _) => std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?,
            (None, Some(name)) => render_config(&RunConfig::preset(name)?),
            (None, None) => return Err(Error::Usage("pass --config PATH or --preset NAME".into())),
        };
        let mut entries = parse_entries(&text)?;
        let flags = [
            ("run.output_dir", self.output_dir.as_ref().map(|p| p.display().to_string())),
            ("run.t_final", self.t_final.clone()),
            ("grid.n_cells", self.n_cells.clone()),
            ("scheme.flux_kind", self.flux_kind.clone()),
            ("model.epsilon", self.epsilon.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                apply_override(&mut entries, &format!("{key}={v}"))?;
            }
        }
        for o in &self.overrides {
            apply_override(&mut entries, o)?;
        }
        if let Some(t) = &self.t_final {
            let explicit = self.overrides.iter().any(|o| o.trim_start().starts_with("run.snapshot_times"));
            if !explicit {
                apply_override(&mut entries, &format!("run.snapshot_times=0, {t}"))?;
            }
        }
        let config = config_from_entries(&entries)?;
        Ok(config)
    }
}

fn dx_tag(dx: f64) -> String {
    format!("dx{}", (1.0 / dx).round() as u64)
}

fn cmd_run(config: &RunConfig) -> Result<()> {
    let out = &config.output_dir;
    let result = simulate(&config.setup(), config.grid.dx())?;
    let mut files = Vec::new();
    for snap in &result.snapshots {
        let name = solution_file_name(snap.requested);
        write_solution_csv(&snap.u, &out.join(&name))?;
        files.push(name);
    }
    let snapshots = result.snapshots.iter().map(|s| vec![s.requested, s.t]).collect();
    let mut tables = vec![Table::new("snapshots", &["requested_t", "t"], snapshots)];
    if let Some(report) = &result.report {
        tables.push(steps_table(report));
        if !report.all_ok() {
            log::warn!("diagnostics failed: {}", report.flags.failures().join(", "));
        }
    }
    write_report(result.report.as_ref(), &tables, &files, out)?;
    println!(
        "run: {} steps, dt = {:.6e}, t = {}, output in {}",
        result.state.n,
        result.dt,
        result.state.t,
        out.display()
    );
    Ok(())
}

fn cmd_refine(config: &RunConfig) -> Result<()> {
    let out = &config.output_dir;
    let table = refinement_study(&config.setup(), &config.experiment.dx_list)?;
    let mut files = Vec::new();
    for run in &table.runs {
        for snap in &run.snapshots {
            let name = format!("{}_{}", dx_tag(run.dx), solution_file_name(snap.requested));
            write_solution_csv(&snap.u, &out.join(&name))?;
            files.push(name);
        }
    }
    let rows = table
        .rows
        .iter()
        .filter_map(|r| r.cauchy_l1.map(|d| vec![r.dx, d]))
        .collect();
    let t = Table::new("refinement", &["dx", "cauchy_l1"], rows);
    for row in &t.rows {
        println!("dx = {:.6e}  cauchy_l1 = {:.6e}", row[0], row[1]);
    }
    let report = table.runs.last().and_then(|r| r.report.as_ref());
    write_report(report, &[t], &files, out)
}

fn cmd_limit(config: &RunConfig) -> Result<()> {
    let out = &config.output_dir;
    let table = nonlocal_to_local_study(&config.setup(), &config.experiment.eps_list, config.grid.dx())?;
    let mut files = vec![String::from("local_") + &solution_file_name(config.t_final)];
    write_solution_csv(&table.reference.state.u, &out.join(&files[0]))?;
    for (run, &(eps, _)) in table.runs.iter().zip(&table.rows) {
        let name = format!("eps{eps}_{}", solution_file_name(run.state.t));
        write_solution_csv(&run.state.u, &out.join(&name))?;
        files.push(name);
    }
    let t = Table::new(
        "e_eps",
        &["epsilon", "e_l1"],
        table.rows.iter().map(|&(e, d)| vec![e, d]).collect(),
    );
    for &(e, d) in &table.rows {
        println!("epsilon = {e}  e_l1 = {d:.6e}");
    }
    let report = table.runs.first().and_then(|r| r.report.as_ref());
    write_report(report, &[t], &files, out)
}

fn cmd_crossval(config: &RunConfig) -> Result<()> {
    let table = scheme_cross_validation(&config.setup(), &config.experiment.dx_list)?;
    let t = Table::new(
        "crossval",
        &["dx", "l1_lf_godunov"],
        table.rows.iter().map(|&(dx, d)| vec![dx, d]).collect(),
    );
    for &(dx, d) in &table.rows {
        println!("dx = {dx:.6e}  l1_lf_godunov = {d:.6e}");
    }
    write_report(None, &[t], &[], &config.output_dir)
}

fn cmd_validate(config: &RunConfig, prev: &Path, next: &Path, dt: Option<f64>) -> Result<()> {
    let prev = read_solution_csv(prev)?;
    let next = read_solution_csv(next)?;
    let v = validate_pair(config, &prev, &next, dt)?;
    let text = v.render(&prev);
    print!("{text}");
    let path = config.output_dir.join("validate.txt");
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.clone(),
        source: e,
    })?;
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    let failures = v.failures(&prev);
    if !failures.is_empty() && config.diagnostics.fatal_on_violation {
        return Err(Error::Violation(format!("stored pair fails: {}", failures.join(", "))));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Run(c) | Command::Refine(c) | Command::Limit(c) | Command::Crossval(c) => c,
        Command::Validate { common, .. } => common,
    };
    let config = common.load()?;
    if common.print_config {
        print!("{}", render_config(&config));
        return Ok(());
    }
    match &cli.command {
        Command::Run(_) => cmd_run(&config),
        Command::Refine(_) => cmd_refine(&config),
        Command::Limit(_) => cmd_limit(&config),
        Command::Crossval(_) => cmd_crossval(&config),
        Command::Validate { prev, next, dt, .. } => cmd_validate(&config, prev, next, *dt),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
