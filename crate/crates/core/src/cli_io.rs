//! Configuration files, solution CSVs and run reports.
//!
//! Config format: `[section]` headers followed by `key = value` lines, `#`
//! starts a comment. Numbers accept fractions such as `1/75`; lists are comma
//! separated.
//!
//! ```text
//! [model]
//! flux = linear
//! coefficient = monotone-geometric
//! epsilon = 0.1
//! u_bound = 1
//!
//! [grid]
//! x_min = 0
//! x_max = 4
//! n_cells = 600
//!
//! [run]
//! t_final = 0.3
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::{
    alpha_samples, check_convolution_bounds, compute_constants, entropy_residual, verify_step_invariants,
    DiagnosticsOptions, DiagnosticsReport, EntropyResidual, StepRecord, ENVELOPE_TOL, EXACT_TOL,
};
use crate::error::{Error, Result};
use crate::experiments::{
    CoefficientPreset, ExperimentSetup, FluxPreset, InitialData, ModelConfig, NuBarPreset, VelocityPreset,
};
use crate::mesh::{CellField, Grid, NormKind};
use crate::model::operating_bounds;
use crate::scheme::{compute_timestep, FluxKind, RunState, SchemeConfig, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Run,
    Refine,
    Limit,
    Crossval,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::Refine => "refine",
            ExperimentKind::Limit => "limit",
            ExperimentKind::Crossval => "crossval",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl GridConfig {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dx_list: Vec<f64>,
    pub eps_list: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub alpha_count: usize,
    pub fatal_on_violation: bool,
    pub boundary_tolerance: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        let d = DiagnosticsOptions::default();
        Self {
            enabled: true,
            alpha_count: d.alpha_count,
            fatal_on_violation: true,
            boundary_tolerance: d.boundary_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub initial: InitialData,
    pub grid: GridConfig,
    pub scheme: SchemeConfig,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
    pub experiment: ExperimentConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl RunConfig {
    /// Built-in configurations: `linear-monotone` and `lwr-alternating`, both
    /// on `[0, 4]` with `u0 = 0.75` on `(1, 3)` and `T = 0.3`.
    pub fn preset(name: &str) -> Result<Self> {
        let setup = match name {
            "linear-monotone" => ExperimentSetup::linear_monotone(0.1),
            "lwr-alternating" => ExperimentSetup::lwr_alternating(0.1),
            other => return Err(Error::config(format!("unknown preset `{other}`"))),
        };
        Ok(Self {
            model: setup.model,
            initial: setup.initial,
            grid: GridConfig {
                x_min: setup.x_min,
                x_max: setup.x_max,
                n_cells: 600,
            },
            scheme: setup.scheme,
            t_final: setup.t_final,
            snapshot_times: setup.snapshot_times,
            output_dir: PathBuf::from("output"),
            experiment: ExperimentConfig {
                kind: ExperimentKind::Run,
                dx_list: vec![1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0, 1.0 / 600.0],
                eps_list: vec![0.1, 0.05, 0.025, 0.01],
            },
            diagnostics: DiagnosticsConfig::default(),
        })
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.x_min, self.grid.x_max, self.grid.n_cells)
    }

    /// Experiment setup with the configured window, scheme and diagnostics.
    pub fn setup(&self) -> ExperimentSetup {
        ExperimentSetup {
            model: self.model,
            scheme: self.scheme,
            initial: self.initial,
            x_min: self.grid.x_min,
            x_max: self.grid.x_max,
            t_final: self.t_final,
            snapshot_times: self.snapshot_times.clone(),
            diagnostics: DiagnosticsOptions {
                alpha_count: self.diagnostics.alpha_count,
                check_entropy: self.diagnostics.enabled,
                keep_records: self.diagnostics.enabled,
                boundary_tolerance: self.diagnostics.boundary_tolerance,
            },
            fatal_on_violation: self.diagnostics.enabled && self.diagnostics.fatal_on_violation,
        }
    }

    /// Cross-field checks: the model builds and the scheme parameters are admissible.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let model = self
            .model
            .build(grid.dx())
            .map_err(|e| Error::config(format!("[model]: {}", strip(e))))?;
        self.scheme.validate(&model).map_err(|e| {
            let msg = strip(e);
            let key = if msg.starts_with("theta_lf") {
                "theta_lf"
            } else if msg.starts_with("cfl_safety") {
                "cfl_safety"
            } else {
                "theta_face"
            };
            Error::config(format!("[scheme] {key}: {msg}"))
        })?;
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::config(format!("[run] t_final must be non-negative, got {}", self.t_final)));
        }
        if self.snapshot_times.iter().any(|&t| t < 0.0 || t > self.t_final) {
            return Err(Error::config("[run] snapshot_times must lie in [0, t_final]"));
        }
        if self.diagnostics.alpha_count == 0 {
            return Err(Error::config("[diagnostics] alpha_count must be at least 1"));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// One `key = value` entry with its source line (0 for command-line overrides).
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

const SECTIONS: [&str; 6] = ["model", "grid", "scheme", "run", "experiment", "diagnostics"];

const KEYS: [(&str, &[&str]); 6] = [
    ("model", &["flux", "velocity", "nu_bar", "coefficient", "epsilon", "u_bound", "beta_bound", "initial"]),
    ("grid", &["x_min", "x_max", "n_cells"]),
    ("scheme", &["flux_kind", "theta_lf", "cfl_safety", "theta_face", "local_mode"]),
    ("run", &["t_final", "snapshot_times", "output_dir"]),
    ("experiment", &["kind", "dx_list", "eps_list"]),
    ("diagnostics", &["enabled", "alpha_count", "fatal_on_violation", "boundary_tolerance"]),
];

fn known_key(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, keys)| *s == section && keys.contains(&key))
}

/// Splits the text into `section.key` entries; rejects syntax errors,
/// unknown sections or keys and duplicates.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                message: format!("malformed section header `{content}`"),
            })?;
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| Error::Parse {
            line,
            message: format!("key `{key}` appears before any section header"),
        })?;
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("empty key or value in `{content}`"),
            });
        }
        if !known_key(sec, key) {
            return Err(Error::Parse {
                line,
                message: format!("unknown key `{key}` in [{sec}]"),
            });
        }
        let full = format!("{sec}.{key}");
        if let Some(prev) = entries.get(&full) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{full}` on lines {} and {line}", prev.line),
            });
        }
        entries.insert(
            full,
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(entries)
}

/// Applies a `section.key=value` override.
pub fn apply_override(entries: &mut BTreeMap<String, Entry>, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not `section.key=value`")))?;
    let key = key.trim();
    let (sec, k) = key
        .split_once('.')
        .ok_or_else(|| Error::Usage(format!("override key `{key}` must be `section.key`")))?;
    if !known_key(sec, k) {
        return Err(Error::Usage(format!("unknown key `{key}`")));
    }
    entries.insert(
        key.to_string(),
        Entry {
            value: value.trim().to_string(),
            line: 0,
        },
    );
    Ok(())
}

/// Parses a number or a fraction `a/b`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse::<f64>().ok()?,
    };
    v.is_finite().then_some(v)
}

/// Parses `name(arg, ...)` or a bare `name`.
fn parse_call(s: &str) -> Option<(String, Vec<f64>)> {
    let s = s.trim();
    match s.split_once('(') {
        None => Some((s.to_string(), Vec::new())),
        Some((name, rest)) => {
            let args = rest.strip_suffix(')')?;
            let args = args
                .split(',')
                .map(parse_number)
                .collect::<Option<Vec<_>>>()?;
            Some((name.trim().to_string(), args))
        }
    }
}

struct Reader<'a> {
    entries: &'a BTreeMap<String, Entry>,
}

impl Reader<'_> {
    fn err(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match self.entries.get(key) {
            Some(e) if e.line > 0 => Error::Parse {
                line: e.line,
                message: format!("`{key}`: {msg}"),
            },
            _ => Error::config(format!("`{key}`: {msg}")),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    fn number(&self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.raw(key) {
            Some(v) => parse_number(v).ok_or_else(|| self.err(key, format!("`{v}` is not a number"))),
            None => default.ok_or_else(|| Error::config(format!("missing required key `{key}`"))),
        }
    }

    fn optional_number(&self, key: &str, default: Option<f64>) -> Result<Option<f64>> {
        match self.raw(key) {
            Some("none") | Some("delta") => Ok(None),
            Some(_) => self.number(key, None).map(Some),
            None => Ok(default),
        }
    }

    fn list(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|x| parse_number(x).ok_or_else(|| self.err(key, format!("`{}` is not a number", x.trim()))))
                .collect(),
            None => Ok(default),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(self.err(key, format!("expected true or false, got `{v}`"))),
            None => Ok(default),
        }
    }

    fn positive(&self, key: &str, v: f64) -> Result<f64> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.err(key, format!("must be positive, got {v}")))
        }
    }
}

/// Builds a validated [`RunConfig`] from parsed entries.
pub fn config_from_entries(entries: &BTreeMap<String, Entry>) -> Result<RunConfig> {
    let r = Reader { entries };
    let flux = match r.required("model.flux")? {
        "linear" => FluxPreset::Linear,
        "lwr" => FluxPreset::Lwr,
        other => return Err(r.err("model.flux", format!("unknown flux preset `{other}`"))),
    };
    let velocity = match r.raw("model.velocity").unwrap_or("affine") {
        "affine" => VelocityPreset::Affine,
        other => return Err(r.err("model.velocity", format!("unknown velocity preset `{other}`"))),
    };
    let nu_bar = match r.raw("model.nu_bar").unwrap_or("identity") {
        "identity" => NuBarPreset::Identity,
        other => return Err(r.err("model.nu_bar", format!("unknown nu_bar preset `{other}`"))),
    };
    let coeff_text = r.required("model.coefficient")?;
    let coefficient = match parse_call(coeff_text) {
        Some((n, a)) if n == "monotone-geometric" && a.is_empty() => CoefficientPreset::MonotoneGeometric,
        Some((n, a)) if n == "alternating-geometric" && a.is_empty() => CoefficientPreset::AlternatingGeometric,
        Some((n, a)) if n == "constant" && a.len() == 1 => CoefficientPreset::Constant(a[0]),
        Some((n, a)) if n == "step" && a.len() == 3 => CoefficientPreset::Step {
            left: a[0],
            right: a[1],
            x0: a[2],
        },
        _ => return Err(r.err("model.coefficient", format!("unknown coefficient preset `{coeff_text}`"))),
    };
    let epsilon = r.optional_number("model.epsilon", Some(0.1))?;
    if let Some(e) = epsilon {
        r.positive("model.epsilon", e)?;
    }
    let u_bound = r.optional_number("model.u_bound", None)?;
    if let Some(b) = u_bound {
        r.positive("model.u_bound", b)?;
    }
    let beta_bound = r.optional_number("model.beta_bound", None)?;
    if let Some(b) = beta_bound {
        r.positive("model.beta_bound", b)?;
    }
    let initial = match r.raw("model.initial") {
        None => InitialData::block(0.75, 1.0, 3.0),
        Some(text) => match parse_call(text) {
            Some((n, a)) if n == "block" && a.len() == 3 && a[1] <= a[2] => InitialData::block(a[0], a[1], a[2]),
            Some((n, a)) if n == "zero" && a.is_empty() => InitialData::zero(),
            _ => return Err(r.err("model.initial", format!("unknown initial data `{text}`"))),
        },
    };

    let x_min = r.number("grid.x_min", None)?;
    let x_max = r.number("grid.x_max", None)?;
    if x_max <= x_min {
        return Err(r.err("grid.x_max", format!("must exceed x_min = {x_min}")));
    }
    let n = r.number("grid.n_cells", None)?;
    if !(n >= 2.0 && n.fract() == 0.0 && n < 1e9) {
        return Err(r.err("grid.n_cells", format!("must be an integer >= 2, got {n}")));
    }

    let defaults = SchemeConfig::default();
    let flux_kind = match r.raw("scheme.flux_kind").unwrap_or("lax_friedrichs") {
        "lax_friedrichs" => FluxKind::LaxFriedrichs,
        "godunov" => FluxKind::Godunov,
        other => return Err(r.err("scheme.flux_kind", format!("unknown flux kind `{other}`"))),
    };
    let scheme = SchemeConfig {
        flux_kind,
        theta_lf: r.number("scheme.theta_lf", Some(defaults.theta_lf))?,
        cfl_safety: r.number("scheme.cfl_safety", Some(defaults.cfl_safety))?,
        theta_face: r.number("scheme.theta_face", Some(defaults.theta_face))?,
        local_mode: r.boolean("scheme.local_mode", defaults.local_mode)?,
    };

    let t_final = r.number("run.t_final", None)?;
    let snapshot_times = r.list("run.snapshot_times", vec![t_final])?;
    let output_dir = PathBuf::from(r.raw("run.output_dir").unwrap_or("output"));

    let kind = match r.raw("experiment.kind").unwrap_or("run") {
        "run" => ExperimentKind::Run,
        "refine" => ExperimentKind::Refine,
        "limit" => ExperimentKind::Limit,
        "crossval" => ExperimentKind::Crossval,
        other => return Err(r.err("experiment.kind", format!("unknown experiment `{other}`"))),
    };
    let dx_list = r.list("experiment.dx_list", vec![1.0 / 75.0, 1.0 / 150.0, 1.0 / 300.0, 1.0 / 600.0])?;
    let eps_list = r.list("experiment.eps_list", vec![0.1, 0.05, 0.025, 0.01])?;
    for (key, list) in [("experiment.dx_list", &dx_list), ("experiment.eps_list", &eps_list)] {
        if list.is_empty() || list.iter().any(|&v| v <= 0.0) || list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(r.err(key, "must be positive and strictly decreasing"));
        }
    }

    let dd = DiagnosticsConfig::default();
    let diagnostics = DiagnosticsConfig {
        enabled: r.boolean("diagnostics.enabled", dd.enabled)?,
        alpha_count: {
            let v = r.number("diagnostics.alpha_count", Some(dd.alpha_count as f64))?;
            if !(v >= 1.0 && v.fract() == 0.0 && v < 1e6) {
                return Err(r.err("diagnostics.alpha_count", format!("must be a positive integer, got {v}")));
            }
            v as usize
        },
        fatal_on_violation: r.boolean("diagnostics.fatal_on_violation", dd.fatal_on_violation)?,
        boundary_tolerance: {
            let v = r.number("diagnostics.boundary_tolerance", Some(dd.boundary_tolerance))?;
            r.positive("diagnostics.boundary_tolerance", v)?
        },
    };

    let config = RunConfig {
        model: ModelConfig {
            flux,
            velocity,
            nu_bar,
            coefficient,
            epsilon,
            u_bound,
            beta_bound,
        },
        initial,
        grid: GridConfig {
            x_min,
            x_max,
            n_cells: n as usize,
        },
        scheme,
        t_final,
        snapshot_times,
        output_dir,
        experiment: ExperimentConfig {
            kind,
            dx_list,
            eps_list,
        },
        diagnostics,
    };
    config.validate()?;
    Ok(config)
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    config_from_entries(&parse_entries(text)?)
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Renders a configuration that parses back to an equal value.
pub fn render_config(c: &RunConfig) -> String {
    let m = &c.model;
    let flux = match m.flux {
        FluxPreset::Linear => "linear",
        FluxPreset::Lwr => "lwr",
    };
    let coefficient = match m.coefficient {
        CoefficientPreset::Constant(k) => format!("constant({k})"),
        CoefficientPreset::Step { left, right, x0 } => format!("step({left}, {right}, {x0})"),
        CoefficientPreset::MonotoneGeometric => "monotone-geometric".into(),
        CoefficientPreset::AlternatingGeometric => "alternating-geometric".into(),
    };
    let opt = |v: Option<f64>, none: &str| v.map_or(none.to_string(), |x| x.to_string());
    let mut s = String::new();
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "flux = {flux}");
    let _ = writeln!(s, "velocity = affine");
    let _ = writeln!(s, "nu_bar = identity");
    let _ = writeln!(s, "coefficient = {coefficient}");
    let _ = writeln!(s, "epsilon = {}", opt(m.epsilon, "delta"));
    let _ = writeln!(s, "u_bound = {}", opt(m.u_bound, "none"));
    let _ = writeln!(s, "beta_bound = {}", opt(m.beta_bound, "none"));
    if c.initial.value == 0.0 && c.initial.a == 0.0 && c.initial.b == 0.0 {
        let _ = writeln!(s, "initial = zero");
    } else {
        let _ = writeln!(s, "initial = block({}, {}, {})", c.initial.value, c.initial.a, c.initial.b);
    }
    let _ = writeln!(s, "\n[grid]");
    let _ = writeln!(s, "x_min = {}", c.grid.x_min);
    let _ = writeln!(s, "x_max = {}", c.grid.x_max);
    let _ = writeln!(s, "n_cells = {}", c.grid.n_cells);
    let _ = writeln!(s, "\n[scheme]");
    let _ = writeln!(s, "flux_kind = {}", c.scheme.flux_kind.name());
    let _ = writeln!(s, "theta_lf = {}", c.scheme.theta_lf);
    let _ = writeln!(s, "cfl_safety = {}", c.scheme.cfl_safety);
    let _ = writeln!(s, "theta_face = {}", c.scheme.theta_face);
    let _ = writeln!(s, "local_mode = {}", c.scheme.local_mode);
    let _ = writeln!(s, "\n[run]");
    let _ = writeln!(s, "t_final = {}", c.t_final);
    let _ = writeln!(s, "snapshot_times = {}", list_text(&c.snapshot_times));
    let _ = writeln!(s, "output_dir = {}", c.output_dir.display());
    let _ = writeln!(s, "\n[experiment]");
    let _ = writeln!(s, "kind = {}", c.experiment.kind.name());
    let _ = writeln!(s, "dx_list = {}", list_text(&c.experiment.dx_list));
    let _ = writeln!(s, "eps_list = {}", list_text(&c.experiment.eps_list));
    let _ = writeln!(s, "\n[diagnostics]");
    let _ = writeln!(s, "enabled = {}", c.diagnostics.enabled);
    let _ = writeln!(s, "alpha_count = {}", c.diagnostics.alpha_count);
    let _ = writeln!(s, "fatal_on_violation = {}", c.diagnostics.fatal_on_violation);
    let _ = writeln!(s, "boundary_tolerance = {}", c.diagnostics.boundary_tolerance);
    s
}

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `solution_t<time>.csv` with the time at four decimals.
pub fn solution_file_name(t: f64) -> String {
    format!("solution_t{t:.4}.csv")
}

/// Writes `x,u` rows at the cell centers, creating parent directories.
pub fn write_solution_csv(field: &CellField, path: &Path) -> Result<()> {
    let mut s = String::from("x,u\n");
    for (x, u) in field.grid().centers().zip(field.values()) {
        let _ = writeln!(s, "{},{}", fmt_num(x), fmt_num(*u));
    }
    write_file(path, &s)
}

/// Reads a file written by [`write_solution_csv`]; the grid is rebuilt from
/// the (uniform) cell centers.
pub fn read_solution_csv(path: &Path) -> Result<CellField> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,u" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: expected header `x,u`", path.display()),
            })
        }
    }
    let (mut xs, mut us) = (Vec::new(), Vec::new());
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(x, u)| Some((x.trim().parse::<f64>().ok()?, u.trim().parse::<f64>().ok()?)));
        let (x, u) = parsed.ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("{}: malformed row `{line}`", path.display()),
        })?;
        xs.push(x);
        us.push(u);
    }
    if xs.len() < 2 {
        return Err(Error::Input(format!("{}: need at least two rows", path.display())));
    }
    let n = xs.len();
    let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    if xs.windows(2).any(|w| ((w[1] - w[0]) - dx).abs() > 1e-9 * dx) {
        return Err(Error::Input(format!("{}: cell centers are not uniform", path.display())));
    }
    let grid = Grid::new(xs[0] - 0.5 * dx, xs[n - 1] + 0.5 * dx, n)?;
    CellField::new(grid, us)
}

/// A named numeric table, written as `<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Structured key-value report text.
pub fn render_report(report: Option<&DiagnosticsReport>, tables: &[Table]) -> String {
    let mut s = String::new();
    if let Some(r) = report {
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "steps = {}", r.steps);
        let _ = writeln!(s, "all_ok = {}", r.all_ok());
        let _ = writeln!(s, "\n[flags]");
        for (name, v) in r.flags.named() {
            let text = v.map_or("not_applicable".to_string(), |b| b.to_string());
            let _ = writeln!(s, "{name} = {text}");
        }
        let c = &r.constants;
        let _ = writeln!(s, "\n[constants]");
        for (k, v) in [
            ("k1", c.k1),
            ("k2", c.k2),
            ("k3", c.k3),
            ("k4", c.k4),
            ("k5", c.k5),
            ("k6", c.k6),
            ("k7_empirical", r.k7_empirical),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_num(v));
        }
        let b = &r.bounds;
        let _ = writeln!(s, "\n[bounds]");
        for (k, v) in [
            ("u_max", b.u_max),
            ("u_envelope", b.u_envelope),
            ("beta_max", b.beta_max),
            ("c_max", b.c_max),
            ("flux_lipschitz", b.flux_lipschitz),
            ("nu_sup", b.nu_sup),
            ("nu_prime_sup", b.nu_prime_sup),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_num(v));
        }
        let _ = writeln!(s, "u_max_is_assumed = {}", b.u_max_is_assumed);
        let _ = writeln!(s, "\n[extrema]");
        for (k, v) in [
            ("u_min", r.u_min),
            ("u_max", r.u_max),
            ("c_min", r.c_min),
            ("c_max", r.c_max),
            ("max_mass_drift", r.max_mass_drift),
            ("cumulative_mass_drift", r.cumulative_mass_drift),
            ("convolution_first_margin", r.max_convolution_margins.0),
            ("convolution_second_margin", r.max_convolution_margins.1),
        ] {
            let _ = writeln!(s, "{k} = {}", fmt_num(v));
        }
        if let Some(e) = r.worst_entropy {
            let _ = writeln!(s, "\n[entropy]");
            let _ = writeln!(s, "max_residual = {}", fmt_num(e.residual));
            let _ = writeln!(s, "step = {}", e.step);
            let _ = writeln!(s, "cell = {}", e.cell);
            let _ = writeln!(s, "alpha = {}", fmt_num(e.alpha));
        }
    }
    for t in tables {
        let _ = writeln!(s, "\n[table.{}]", t.name);
        let _ = writeln!(s, "file = {}", t.file_name());
        let _ = writeln!(s, "columns = {}", t.header.join(","));
        let _ = writeln!(s, "rows = {}", t.rows.len());
        if t.name == "steps" {
            continue;
        }
        for (i, row) in t.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            let _ = writeln!(s, "row{i} = {}", cells.join(","));
        }
    }
    s
}

/// Per-step records as a table.
pub fn steps_table(report: &DiagnosticsReport) -> Table {
    let rows = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.step as f64,
                r.t,
                r.mass,
                r.min_u,
                r.max_u,
                r.tv_u,
                r.entropy_violation_max,
                r.convolution_first_margin,
                r.convolution_second_margin,
            ]
        })
        .collect();
    Table::new(
        "steps",
        &[
            "step",
            "t",
            "mass",
            "min_u",
            "max_u",
            "tv_u",
            "entropy_violation_max",
            "convolution_first_margin",
            "convolution_second_margin",
        ],
        rows,
    )
}

/// Gnuplot script plotting the given solution files and tables.
pub fn render_plot_script(solutions: &[String], tables: &[Table]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    if !solutions.is_empty() {
        s.push_str("set xlabel 'x'\nset ylabel 'u'\nplot ");
        let parts: Vec<String> = solutions
            .iter()
            .map(|f| format!("'{f}' using 1:2 with lines title '{f}'"))
            .collect();
        s.push_str(&parts.join(", \\\n     "));
        s.push_str("\npause -1\n");
    }
    for t in tables
        .iter()
        .filter(|t| !matches!(t.name.as_str(), "steps" | "snapshots") && t.header.len() >= 2)
    {
        let _ = write!(
            s,
            "set logscale xy\nset xlabel '{}'\nset ylabel '{}'\nplot '{}' using 1:2 with linespoints\npause -1\nunset logscale\n",
            t.header[0],
            t.header[1],
            t.file_name()
        );
    }
    s
}

/// Writes `report.txt`, one CSV per table and `plot.gp` into `dir`.
pub fn write_report(report: Option<&DiagnosticsReport>, tables: &[Table], solutions: &[String], dir: &Path) -> Result<()> {
    write_file(&dir.join("report.txt"), &render_report(report, tables))?;
    for t in tables {
        write_file(&dir.join(t.file_name()), &t.to_csv())?;
    }
    write_file(&dir.join("plot.gp"), &render_plot_script(solutions, tables))
}

/// Checks of a stored pair `(u^n, u^{n+1})` against the configured scheme.
#[derive(Debug, Clone)]
pub struct PairValidation {
    pub dt: f64,
    pub record: StepRecord,
    pub entropy: EntropyResidual,
    pub convolution_margins: (f64, f64),
    /// `max_i |next_i - step(prev)_i|`.
    pub scheme_residual: f64,
}

impl PairValidation {
    pub fn failures(&self, prev: &CellField) -> Vec<&'static str> {
        let mut out = Vec::new();
        let r = &self.record;
        let checks = [
            ("positivity_ok", r.positivity_ok),
            ("mass_ok", r.mass_ok),
            ("linf_bound_ok", r.linf_bound_ok),
            ("bv_bound_ok", r.bv_bound_ok),
            ("entropy_ok", self.entropy.residual <= EXACT_TOL),
            (
                "convolution_bounds_ok",
                self.convolution_margins.0 <= 1.0 + ENVELOPE_TOL && self.convolution_margins.1 <= 1.0 + ENVELOPE_TOL,
            ),
            (
                "scheme_consistency_ok",
                self.scheme_residual <= EXACT_TOL * prev.norm(NormKind::Linf).max(1.0),
            ),
        ];
        for (name, ok) in checks {
            if !ok {
                out.push(name);
            }
        }
        out
    }

    pub fn render(&self, prev: &CellField) -> String {
        let failures = self.failures(prev);
        let r = &self.record;
        let mut s = String::from("[validate]\n");
        let _ = writeln!(s, "all_ok = {}", failures.is_empty());
        let _ = writeln!(s, "failures = {}", failures.join(","));
        let _ = writeln!(s, "dt = {}", fmt_num(self.dt));
        let _ = writeln!(s, "min_u = {}", fmt_num(r.min_u));
        let _ = writeln!(s, "mass_drift = {}", fmt_num(r.mass_drift));
        let _ = writeln!(s, "linf_bound = {}", fmt_num(r.linf_bound));
        let _ = writeln!(s, "bv_bound = {}", fmt_num(r.bv_bound));
        let _ = writeln!(s, "tv_u = {}", fmt_num(r.tv_u));
        let _ = writeln!(s, "entropy_max_residual = {}", fmt_num(self.entropy.residual));
        let _ = writeln!(s, "entropy_cell = {}", self.entropy.cell);
        let _ = writeln!(s, "entropy_alpha = {}", fmt_num(self.entropy.alpha));
        let _ = writeln!(s, "convolution_first_margin = {}", fmt_num(self.convolution_margins.0));
        let _ = writeln!(s, "convolution_second_margin = {}", fmt_num(self.convolution_margins.1));
        let _ = writeln!(s, "scheme_residual = {}", fmt_num(self.scheme_residual));
        s
    }
}

/// Treats `prev` as initial data, recomputes the step and runs every
/// per-step check on `(prev, next)`. `dt` defaults to the admissible step.
pub fn validate_pair(config: &RunConfig, prev: &CellField, next: &CellField, dt: Option<f64>) -> Result<PairValidation> {
    if prev.grid() != next.grid() {
        return Err(Error::Usage("the two solutions live on different grids".into()));
    }
    let grid = *prev.grid();
    let model = config.model.build(grid.dx())?;
    let stepper = Stepper::new(&model, &config.scheme, &grid)?;
    let model = stepper.model().clone();
    let bounds = operating_bounds(&model, prev, config.t_final)?;
    let dt = match dt {
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::config(format!("dt must be positive, got {dt}"))),
        None => compute_timestep(&config.scheme, &model, &grid, &bounds)?,
    };
    let prev_state = RunState::new(&model, prev.clone(), dt);
    let (expected, faces) = stepper.step_with_dt(&prev_state, dt)?;
    let mut next_state = expected.clone();
    next_state.u = next.clone();
    let constants = compute_constants(&model, prev, &bounds);
    let record = verify_step_invariants(&prev_state, &next_state, &constants);
    let alphas = alpha_samples(&prev_state, config.diagnostics.alpha_count);
    let entropy = entropy_residual(&prev_state, &next_state, &faces, &model, &config.scheme, &alphas);
    let convolution_margins = if model.kernel.is_local() {
        (0.0, 0.0)
    } else {
        check_convolution_bounds(&faces, &constants, grid.dx())
    };
    let scheme_residual = expected
        .u
        .values()
        .iter()
        .zip(next.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PairValidation {
        dt,
        record,
        entropy,
        convolution_margins,
        scheme_residual,
    })
}
