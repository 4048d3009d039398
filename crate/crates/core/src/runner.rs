//! Scenario orchestration and run artifacts.
//!
//! Every run writes into one output directory:
//!
//! - `ledger.csv` / `ledger.json`: time series (see the README for columns),
//! - `snapshots/<name>_<step>.f64`: flat little-endian f64 field values with a
//!   `.json` sidecar describing the grid,
//! - `manifest.json`: the canonical config, its SHA-256, the seed and the list
//!   of files written,
//! - `failure.json` when a solver fails.
//!
//! Nothing time- or host-dependent is written, so identical configs give
//! byte-identical outputs.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, ForcingSpec, InitialSpec, LawSpec, Scenario, SimConfig, VelocitySpec};
use crate::diagnostics::{config_hash, inequality_check, Inequality, RunLedger};
use crate::error::Error;
use crate::grid::{Bc, Grid, ScalarField, VectorField};
use crate::hsch::{hsch_step, max_div, Forcing, HschParams, HschState, VelocityLaw};
use crate::kernel::{kernel_fd, kernel_series};
use crate::phase_field::{ch_step, energy, mean, ChParams, ChState};
use crate::thin_layer::{convergence_study, CosineProfile, StripForcing, StudyConfig, ThinPerturbation};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("solver failure at step {step} (t = {t}): {error}")]
    Solver { error: Error, step: usize, t: f64 },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver { .. } | RunError::Io { .. } => 3,
        }
    }
}

fn solver(step: usize, t: f64) -> impl Fn(Error) -> RunError {
    move |error| RunError::Solver { error, step, t }
}

/// Summary lines and file list of a finished run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub lines: Vec<String>,
    pub files: Vec<String>,
}

/// Sidecar of a field snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub name: String,
    pub step: usize,
    pub t: f64,
    pub dtype: String,
    /// `nodes`, `x_edges` or `y_edges`; x varies fastest.
    pub location: String,
    pub shape: [usize; 2],
    /// `[min, max, cells]` per axis.
    pub x: [f64; 3],
    pub y: Option<[f64; 3]>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir.join("snapshots")).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn ledger(&mut self, stem: &str, ledger: &RunLedger) -> Result<(), RunError> {
        let csv = ledger.to_csv().map_err(solver(0, 0.0))?;
        let js = ledger.to_json().map_err(solver(0, 0.0))?;
        self.write(&format!("{stem}.csv"), csv.as_bytes())?;
        self.write(&format!("{stem}.json"), js.as_bytes())
    }

    fn snapshot(&mut self, name: &str, grid: &Grid, location: &str, values: &[f64], step: usize, t: f64) -> Result<(), RunError> {
        let shape = match location {
            "x_edges" => grid.edge_shape(0),
            "y_edges" => grid.edge_shape(1),
            _ => (grid.nx(), grid.ny()),
        };
        let meta = SnapshotMeta {
            name: name.into(),
            step,
            t,
            dtype: "f64le".into(),
            location: location.into(),
            shape: [shape.0, shape.1],
            x: [grid.x.min, grid.x.max, grid.x.cells as f64],
            y: grid.y.map(|a| [a.min, a.max, a.cells as f64]),
        };
        let stem = format!("snapshots/{name}_{step:06}");
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.write(&format!("{stem}.f64"), &bytes)?;
        let js = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        self.write(&format!("{stem}.json"), js.as_bytes())
    }
}

/// Reads a flat little-endian f64 snapshot.
pub fn read_snapshot(path: &Path) -> std::io::Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn wants_snapshot(step: usize, last: usize, every: usize) -> bool {
    step == 0 || step == last || (every > 0 && step % every == 0)
}

fn wants_row(step: usize, last: usize, every: usize) -> bool {
    step % every == 0 || step == last
}

fn initial_phase(cfg: &SimConfig, grid: Grid, base: &Path) -> Result<ScalarField, RunError> {
    let (x0, lx) = (cfg.x[0], cfg.x[1] - cfg.x[0]);
    let (y0, ly) = (cfg.y[0], cfg.y[1] - cfg.y[0]);
    let field = match &cfg.phi0 {
        InitialSpec::Constant { value } => ScalarField::constant(grid, Bc::Neumann0, *value),
        InitialSpec::Cosine { mean, modes } => ScalarField::from_fn(grid, Bc::Neumann0, |x, y| {
            let (sx, sy) = ((x - x0) / lx, if grid.dim() == 2 { (y - y0) / ly } else { 0.0 });
            mean + modes
                .iter()
                .map(|m| m.amplitude * (m.kx as f64 * PI * sx).cos() * (m.ky as f64 * PI * sy).cos())
                .sum::<f64>()
        }),
        InitialSpec::Random { mean, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let values = (0..grid.len()).map(|_| mean + amplitude * rng.random_range(-1.0..=1.0)).collect();
            ScalarField::from_values(grid, Bc::Neumann0, values).map_err(solver(0, 0.0))?
        }
        InitialSpec::File { path } => {
            let p = base.join(path);
            let values = read_snapshot(&p).map_err(|e| ConfigError::new("phi0.path", format!("{}: {e}", p.display())))?;
            if values.len() != grid.len() {
                return Err(ConfigError::new(
                    "phi0.path",
                    format!("snapshot has {} values, the grid has {}", values.len(), grid.len()),
                )
                .into());
            }
            ScalarField::from_values(grid, Bc::Neumann0, values).map_err(|e| ConfigError::new("phi0.path", e.to_string()))?
        }
    };
    Ok(field)
}

fn interpolate(times: &[f64], values: &[[f64; 2]], t: f64) -> [f64; 2] {
    let k = times.partition_point(|s| *s <= t);
    if k == 0 {
        return values[0];
    }
    if k == times.len() {
        return values[k - 1];
    }
    let s = (t - times[k - 1]) / (times[k] - times[k - 1]);
    [0, 1].map(|c| values[k - 1][c] + s * (values[k][c] - values[k - 1][c]))
}

fn forcing_2d(cfg: &SimConfig, grid: Grid) -> Forcing {
    match &cfg.forcing {
        ForcingSpec::Zero => Forcing::Zero,
        ForcingSpec::Constant { value } => Forcing::Constant(*value),
        ForcingSpec::Tabulated { times, values } => Forcing::Tabulated {
            times: times.clone(),
            fields: values.iter().map(|v| VectorField::from_fn(grid, |_, _| *v)).collect(),
        },
    }
}

fn forcing_strip(cfg: &SimConfig) -> StripForcing {
    match &cfg.forcing {
        ForcingSpec::Zero => StripForcing::Zero,
        ForcingSpec::Constant { value } => StripForcing::Constant(value[0]),
        ForcingSpec::Tabulated { times, values } => {
            let (times, values) = (times.clone(), values.clone());
            StripForcing::function(move |t, _| interpolate(&times, &values, t)[0])
        }
    }
}

/// Checks `cfg` against `scenario` without running anything.
pub fn validate(cfg: &SimConfig, scenario: Scenario) -> Result<(), ConfigError> {
    cfg.validate(scenario)?;
    cfg.ch_params()?;
    Ok(())
}

/// Runs `scenario`, writing artifacts to `out`. `base` resolves relative
/// paths in the config.
pub fn run(scenario: Scenario, cfg: &SimConfig, base: &Path, out: &Path) -> Result<RunOutcome, RunError> {
    validate(cfg, scenario)?;
    let mut art = Artifacts::new(out)?;
    let result = match scenario {
        Scenario::Kernel => run_kernel(cfg, &mut art),
        Scenario::Ch1d => run_ch1d(cfg, base, &mut art),
        Scenario::Hsch2d => run_hsch2d(cfg, base, &mut art),
        Scenario::ThinLayer => run_thin_layer(cfg, &mut art),
        Scenario::Suite => run_suite(cfg, &mut art),
    };
    let status = match &result {
        Ok(_) => "ok",
        Err(RunError::Solver { error, step, t }) => {
            let dump = json!({ "error": error.to_string(), "step": step, "t": t });
            art.write("failure.json", serde_json::to_string_pretty(&dump).expect("json").as_bytes())?;
            "failed"
        }
        Err(_) => "failed",
    };
    let canonical = cfg.canonical_json();
    let manifest = json!({
        "scenario": scenario.name(),
        "status": status,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_hash": config_hash(canonical.as_bytes()),
        "config": serde_json::from_str::<serde_json::Value>(&canonical).expect("json"),
        "files": art.files,
    });
    art.write("manifest.json", serde_json::to_string_pretty(&manifest).expect("json").as_bytes())?;
    let mut lines = result?;
    lines.push(format!("wrote {} files to {}", art.files.len(), out.display()));
    Ok(RunOutcome {
        lines,
        files: art.files,
    })
}

/// Start of the series/finite-difference comparison window; before it the
/// truncated series and the wall layer of the difference scheme dominate.
const COMPARE_FROM: f64 = 0.05;

fn run_kernel(cfg: &SimConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let grid = Grid::interval(-1.0, 1.0, cfg.cells[0]).map_err(solver(0, 0.0))?;
    let fd = kernel_fd(cfg.alpha, &grid, cfg.dt, cfg.t_end).map_err(solver(0, 0.0))?;
    let series = kernel_series(cfg.alpha, cfg.n_modes, 1).map_err(solver(0, 0.0))?;
    let g0_error = (series.g(0.0) - 1.0).abs();
    let mut ledger = RunLedger::new(["g_series", "g_fd", "abs_diff"])
        .with_meta("scenario", "kernel")
        .with_meta("truncation_bound", series.truncation_error_bound.to_string())
        .with_meta("g0_error", g0_error.to_string());
    let last = fd.times.len() - 1;
    let mut max_diff: f64 = 0.0;
    for (k, (&t, &g)) in fd.times.iter().zip(&fd.g).enumerate() {
        let gs = series.g(t);
        if t >= COMPARE_FROM {
            max_diff = max_diff.max((gs - g).abs());
        }
        if wants_row(k, last, cfg.output.ledger_every) {
            ledger.push(t, vec![gs, g, (gs - g).abs()]).map_err(solver(k, t))?;
        }
    }
    art.ledger("ledger", &ledger)?;
    art.snapshot("w", &grid, "nodes", &fd.last.w.values, last, fd.last.t)?;
    Ok(vec![
        format!("g(0) = {} (truncation bound {:e})", series.g(0.0), series.truncation_error_bound),
        format!("max |g_series - g_fd| for t >= {COMPARE_FROM}: {max_diff:e}"),
    ])
}

fn run_ch1d(cfg: &SimConfig, base: &Path, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let params = cfg.ch_params()?;
    let grid = Grid::interval(cfg.x[0], cfg.x[1], cfg.cells[0]).map_err(solver(0, 0.0))?;
    let phi0 = initial_phase(cfg, grid, base)?;
    let mut st = ChState::new(phi0, &params).map_err(solver(0, 0.0))?;
    let mut ledger = RunLedger::new(["mass", "energy", "phi_min", "phi_max"]).with_meta("scenario", "ch1d");
    let steps = cfg.steps();
    let m0 = mean(&st.phi);
    let mut drift: f64 = 0.0;
    let mut rise = f64::NEG_INFINITY;
    let mut e_prev = f64::INFINITY;
    for n in 0..=steps {
        if n > 0 {
            st = ch_step(&st, None, cfg.dt, &params).map_err(solver(n, st.t + cfg.dt))?;
        }
        let m = mean(&st.phi);
        let e = energy(&st.phi, None, &params).map_err(solver(n, st.t))?;
        drift = drift.max((m - m0).abs());
        if n > 0 {
            rise = rise.max(e - e_prev);
        }
        e_prev = e;
        if wants_row(n, steps, cfg.output.ledger_every) {
            let (lo, hi) = st.phi.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            ledger.push(st.t, vec![m, e, lo, hi]).map_err(solver(n, st.t))?;
        }
        if wants_snapshot(n, steps, cfg.output.snapshot_every) {
            art.snapshot("phi", &grid, "nodes", &st.phi.values, n, st.t)?;
        }
    }
    art.ledger("ledger", &ledger)?;
    Ok(vec![
        format!("{steps} steps, mass drift {drift:e}"),
        format!("largest per-step energy increase {rise:e}"),
    ])
}

fn run_hsch2d(cfg: &SimConfig, base: &Path, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let mut params = HschParams::new(cfg.ch_params()?);
    params.law = match cfg.law {
        LawSpec::Memory => VelocityLaw::Memory,
        LawSpec::Local { permeability } => VelocityLaw::Local { permeability },
    };
    let grid = Grid::rectangle((cfg.x[0], cfg.x[1]), (cfg.y[0], cfg.y[1]), (cfg.cells[0], cfg.cells[1])).map_err(solver(0, 0.0))?;
    let kernel = kernel_series(cfg.alpha, cfg.n_modes, 2).map_err(solver(0, 0.0))?;
    let phi0 = initial_phase(cfg, grid, base)?;
    let u0 = match cfg.u0 {
        VelocitySpec::Zero => None,
        VelocitySpec::Constant { value } => Some(VectorField::from_fn(grid, |_, _| value)),
    };
    let h1 = forcing_2d(cfg, grid);
    let mut st = HschState::new(phi0, u0, &kernel, &h1, cfg.dt, &params).map_err(solver(0, 0.0))?;
    let mut ledger = RunLedger::new(["mass", "energy", "u_max", "div_u", "darcy_residual", "p_mean"]).with_meta("scenario", "hsch2d");
    let steps = cfg.steps();
    let m0 = mean(&st.ch.phi);
    let (mut drift, mut worst_div, mut worst_res) = (0.0f64, 0.0f64, 0.0f64);
    for n in 0..=steps {
        if n > 0 {
            let t = st.t + cfg.dt;
            st = hsch_step(st, &h1, cfg.dt, &params).map_err(solver(n, t))?;
        }
        let m = mean(&st.ch.phi);
        drift = drift.max((m - m0).abs());
        let (div, res) = if n == 0 {
            (max_div(&st.u).map_err(solver(n, st.t))?, 0.0)
        } else {
            (st.last.div_u, st.last.darcy_residual)
        };
        worst_div = worst_div.max(div / st.u.norm_inf().max(f64::MIN_POSITIVE));
        worst_res = worst_res.max(res);
        if wants_row(n, steps, cfg.output.ledger_every) {
            let e = st.energy(&params).map_err(solver(n, st.t))?;
            ledger
                .push(st.t, vec![m, e, st.u.norm_inf(), div, res, mean(&st.p)])
                .map_err(solver(n, st.t))?;
        }
        if wants_snapshot(n, steps, cfg.output.snapshot_every) {
            art.snapshot("phi", &grid, "nodes", &st.ch.phi.values, n, st.t)?;
            art.snapshot("p", &grid, "nodes", &st.p.values, n, st.t)?;
            art.snapshot("ux", &grid, "x_edges", &st.u.components[0], n, st.t)?;
            art.snapshot("uy", &grid, "y_edges", &st.u.components[1], n, st.t)?;
        }
    }
    art.ledger("ledger", &ledger)?;
    Ok(vec![
        format!("{steps} steps, mass drift {drift:e}"),
        format!("max div u / max |u| = {worst_div:e}, max Darcy residual {worst_res:e}"),
    ])
}

fn run_thin_layer(cfg: &SimConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let ch: ChParams = cfg.ch_params()?;
    let phi0 = match &cfg.phi0 {
        InitialSpec::Constant { value } => CosineProfile {
            mean: *value,
            modes: vec![],
        },
        InitialSpec::Cosine { mean, modes } => CosineProfile {
            mean: *mean,
            modes: modes.iter().map(|m| (m.kx, m.amplitude)).collect(),
        },
        _ => return Err(ConfigError::new("phi0", "unsupported for the strip study").into()),
    };
    let study = StudyConfig {
        a: cfg.x[0],
        b: cfg.x[1],
        cells: (cfg.cells[0], cfg.cells[1]),
        alpha: cfg.alpha,
        ch,
        dt: cfg.dt,
        t_end: cfg.t_end,
        phi0,
        perturbation: ThinPerturbation {
            amplitude: cfg.thin_layer.perturbation_amplitude,
            exponent: cfg.thin_layer.perturbation_exponent,
        },
        h1: forcing_strip(cfg),
    };
    let report = convergence_study(&cfg.thin_layer.eps, &study).map_err(solver(0, 0.0))?;
    art.write("convergence.csv", report.to_csv().map_err(solver(0, 0.0))?.as_bytes())?;
    for (k, r) in report.runs.iter().enumerate() {
        art.ledger(&format!("ledger_eps{k}"), &r.ledger)?;
    }
    let mut lines: Vec<String> = report
        .runs
        .iter()
        .map(|r| {
            format!(
                "eps {}: e_phi {:e} e_u {:e} r_p {:e} max energy defect {:e} max coupling cfl {:.3}",
                r.eps, r.e_phi, r.e_u, r.r_p, r.max_energy_defect, r.max_coupling_cfl
            )
        })
        .collect();
    lines.push(format!(
        "e_phi decreasing {}, e_u decreasing {}, r_p decreasing {}, scaled norm ratios {:?}",
        report.e_phi_decreasing(),
        report.e_u_decreasing(),
        report.r_p_decreasing(),
        report.scaled_norm_ratios
    ));
    if report.runs.iter().any(|r| r.max_coupling_cfl > 1.0) {
        lines.push("warning: explicit capillary coupling exceeded cfl 1; reduce dt".into());
    }
    Ok(lines)
}

/// One line of the property suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

fn run_suite(cfg: &SimConfig, art: &mut Artifacts) -> Result<Vec<String>, RunError> {
    let mut entries = Vec::new();
    let cells = cfg.cells[0];
    for which in [Inequality::PoincareStrip, Inequality::Agmon, Inequality::GnL4] {
        let r = inequality_check(which, 20, cells, cfg.seed).map_err(solver(0, 0.0))?;
        match r.proven_bound {
            Some(b) => entries.push(SuiteEntry {
                name: format!("{}_bound", r.name),
                passed: r.max_ratio <= b,
                value: r.max_ratio,
                bound: b,
            }),
            None => entries.push(SuiteEntry {
                name: format!("{}_grid_stability", r.name),
                passed: r.grid_stable,
                value: r.refinement_change,
                bound: crate::diagnostics::GRID_STABILITY_TOL,
            }),
        }
    }

    // Cahn-Hilliard invariants on seeded random data
    let params = cfg.ch_params()?;
    let grid = Grid::interval(cfg.x[0], cfg.x[1], cells).map_err(solver(0, 0.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let values = (0..grid.len()).map(|_| 0.1 * rng.random_range(-1.0..=1.0)).collect();
    let mut st = ChState::new(ScalarField::from_values(grid, Bc::Neumann0, values).map_err(solver(0, 0.0))?, &params)
        .map_err(solver(0, 0.0))?;
    let m0 = mean(&st.phi);
    let mut e_prev = energy(&st.phi, None, &params).map_err(solver(0, 0.0))?;
    let (mut drift, mut rise) = (0.0f64, f64::NEG_INFINITY);
    for n in 1..=cfg.steps() {
        st = ch_step(&st, None, cfg.dt, &params).map_err(solver(n, st.t))?;
        let e = energy(&st.phi, None, &params).map_err(solver(n, st.t))?;
        rise = rise.max(e - e_prev);
        e_prev = e;
        drift = drift.max((mean(&st.phi) - m0).abs());
    }
    entries.push(SuiteEntry {
        name: "ch_mass_drift".into(),
        passed: drift <= 1e-10,
        value: drift,
        bound: 1e-10,
    });
    entries.push(SuiteEntry {
        name: "ch_energy_step_increase".into(),
        passed: rise <= 1e-12,
        value: rise,
        bound: 1e-12,
    });

    // kernel structure
    let kernel = kernel_series(cfg.alpha, cfg.n_modes, 2).map_err(solver(0, 0.0))?;
    let (mut asym, mut min_eig) = (0.0f64, f64::INFINITY);
    for k in 0..100 {
        let m = kernel.evaluate(10.0 * k as f64 / 99.0).map_err(solver(0, 0.0))?;
        asym = asym.max(m.asymmetry());
        min_eig = min_eig.min(m.min_eigenvalue());
    }
    entries.push(SuiteEntry {
        name: "kernel_symmetry".into(),
        passed: asym == 0.0,
        value: asym,
        bound: 0.0,
    });
    entries.push(SuiteEntry {
        name: "kernel_min_eigenvalue".into(),
        passed: min_eig > 0.0,
        value: min_eig,
        bound: 0.0,
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunError::Solver {
        error: Error::InvalidParameter {
            name: "suite",
            reason: e.to_string(),
        },
        step: 0,
        t: 0.0,
    };
    w.write_record(["name", "passed", "value", "bound"]).map_err(csv_err)?;
    for e in &entries {
        w.write_record([e.name.clone(), e.passed.to_string(), e.value.to_string(), e.bound.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    art.write("suite.csv", &bytes)?;
    art.write("suite.json", serde_json::to_string_pretty(&entries).expect("json").as_bytes())?;
    Ok(entries
        .iter()
        .map(|e| format!("{} {}: {:e} (bound {:e})", if e.passed { "PASS" } else { "FAIL" }, e.name, e.value, e.bound))
        .collect())
}
