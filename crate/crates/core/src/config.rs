//! JSON run configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::MIN_CELLS;
use crate::phase_field::{ChParams, Potential};
use crate::thin_layer::MIN_THIN_CELLS;

/// Field-level configuration error.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Kernel,
    Ch1d,
    Hsch2d,
    ThinLayer,
    Suite,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Kernel => "kernel",
            Scenario::Ch1d => "ch1d",
            Scenario::Hsch2d => "hsch2d",
            Scenario::ThinLayer => "thin-layer",
            Scenario::Suite => "suite",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        [Scenario::Kernel, Scenario::Ch1d, Scenario::Hsch2d, Scenario::ThinLayer, Scenario::Suite]
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| ConfigError::new("scenario", format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Landau,
    /// Coefficients of `F`, constant term first.
    Quartic { coeffs: [f64; 5] },
}

/// Tangential forcing. Only the first component is used by the strip model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    Zero,
    Constant { value: [f64; 2] },
    /// Spatially constant, piecewise linear in time.
    Tabulated { times: Vec<f64>, values: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineMode {
    pub kx: u32,
    #[serde(default)]
    pub ky: u32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    /// `mean + sum a cos(kx pi x~) cos(ky pi y~)` on the unit-scaled domain.
    Cosine {
        mean: f64,
        modes: Vec<CosineMode>,
    },
    /// `mean + amplitude * U(-1, 1)` per node from the run seed.
    Random {
        mean: f64,
        amplitude: f64,
    },
    /// Flat little-endian f64 snapshot, relative to the config file.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    #[default]
    Zero,
    Constant {
        value: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    #[default]
    Memory,
    Local {
        permeability: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Steps between field snapshots; 0 writes only the first and last.
    #[serde(default)]
    pub snapshot_every: usize,
    /// Steps between ledger rows.
    #[serde(default = "one_usize")]
    pub ledger_every: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            snapshot_every: 0,
            ledger_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinLayerSpec {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Thin-direction structure `amplitude eps^exponent` of the initial phase.
    #[serde(default = "one_f64")]
    pub perturbation_amplitude: f64,
    #[serde(default = "one_f64")]
    pub perturbation_exponent: f64,
}

impl Default for ThinLayerSpec {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            perturbation_amplitude: 1.0,
            perturbation_exponent: 1.0,
        }
    }
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_beta() -> f64 {
    0.01
}

fn default_extent() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_cells() -> [usize; 2] {
    [64, 64]
}

fn default_modes() -> usize {
    crate::kernel::DEFAULT_MODES
}

fn default_tol() -> f64 {
    1e-11
}

fn default_phi0() -> InitialSpec {
    InitialSpec::Constant { value: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Must match the subcommand when present.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default = "one_f64")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "one_f64")]
    pub lambda: f64,
    /// `[min, max]` along x. For the strip this is `(a, b)`.
    #[serde(default = "default_extent")]
    pub x: [f64; 2],
    #[serde(default = "default_extent")]
    pub y: [f64; 2],
    /// Cells along x and y. `kernel` uses the first entry for the gap grid.
    #[serde(default = "default_cells")]
    pub cells: [usize; 2],
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default = "default_phi0")]
    pub phi0: InitialSpec,
    #[serde(default)]
    pub u0: VelocitySpec,
    #[serde(default)]
    pub law: LawSpec,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    /// Relative residual target of the Cahn-Hilliard solve.
    #[serde(default = "default_tol")]
    pub ch_tol: f64,
    #[serde(default)]
    pub thin_layer: ThinLayerSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive and finite, got {v}")))
    }
}

fn extent(field: &str, e: [f64; 2]) -> Result<(), ConfigError> {
    if e.iter().all(|v| v.is_finite()) && e[1] > e[0] {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("needs min < max, got {e:?}")))
    }
}

fn min_cells(field: &str, got: usize, min: usize) -> Result<(), ConfigError> {
    if got >= min {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("needs at least {min} cells, got {got}")))
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde reports missing and unknown fields by name in the message
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<root>".into());
            ConfigError::new(field, msg)
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical serialization; the manifest hash is taken over these bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn potential(&self) -> Result<Potential, ConfigError> {
        match &self.potential {
            PotentialSpec::Landau => Ok(Potential::landau()),
            PotentialSpec::Quartic { coeffs } => {
                Potential::quartic(*coeffs).map_err(|e| ConfigError::new("potential.coeffs", e.to_string()))
            }
        }
    }

    pub fn ch_params(&self) -> Result<ChParams, ConfigError> {
        let p = ChParams::new(self.beta, self.lambda, self.potential()?)
            .map_err(|e| ConfigError::new("beta/lambda", e.to_string()))?;
        Ok(ChParams { tol: self.ch_tol, ..p })
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Schema-level checks plus the invariants of `scenario`.
    pub fn validate(&self, scenario: Scenario) -> Result<(), ConfigError> {
        if let Some(s) = self.scenario {
            if s != scenario {
                return Err(ConfigError::new("scenario", format!("config is for {s}, not {scenario}")));
            }
        }
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("lambda", self.lambda)?;
        positive("dt", self.dt)?;
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(ConfigError::new("t_end", format!("must be at least dt, got {}", self.t_end)));
        }
        if !(self.ch_tol > 0.0 && self.ch_tol < 1.0) {
            return Err(ConfigError::new("ch_tol", format!("must lie in (0, 1), got {}", self.ch_tol)));
        }
        if self.n_modes == 0 {
            return Err(ConfigError::new("n_modes", "must be at least 1"));
        }
        if self.output.ledger_every == 0 {
            return Err(ConfigError::new("output.ledger_every", "must be at least 1"));
        }
        extent("x", self.x)?;
        self.potential()?;
        match &self.forcing {
            ForcingSpec::Zero => {}
            ForcingSpec::Constant { value } => {
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(ConfigError::new("forcing.value", "must be finite"));
                }
            }
            ForcingSpec::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(ConfigError::new("forcing.times", "needs one value per time"));
                }
                if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(ConfigError::new("forcing.times", "must start at 0 and increase"));
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(ConfigError::new("forcing.values", "must be finite"));
                }
            }
        }
        match &self.phi0 {
            InitialSpec::Constant { value } if !value.is_finite() => {
                return Err(ConfigError::new("phi0.value", "must be finite"));
            }
            InitialSpec::Random { amplitude, mean } if !(amplitude.is_finite() && mean.is_finite()) => {
                return Err(ConfigError::new("phi0", "mean and amplitude must be finite"));
            }
            _ => {}
        }
        if let LawSpec::Local { permeability } = self.law {
            positive("law.permeability", permeability)?;
        }
        match scenario {
            Scenario::Kernel => min_cells("cells[0]", self.cells[0], MIN_CELLS)?,
            Scenario::Ch1d => min_cells("cells[0]", self.cells[0], MIN_CELLS)?,
            Scenario::Hsch2d => {
                extent("y", self.y)?;
                min_cells("cells[0]", self.cells[0], MIN_CELLS)?;
                min_cells("cells[1]", self.cells[1], MIN_CELLS)?;
            }
            Scenario::ThinLayer => {
                min_cells("cells[0]", self.cells[0], MIN_CELLS)?;
                min_cells("cells[1]", self.cells[1], MIN_THIN_CELLS)?;
                let eps = &self.thin_layer.eps;
                if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                    return Err(ConfigError::new("thin_layer.eps", "needs positive thicknesses"));
                }
                if eps.windows(2).any(|w| !(w[1] < w[0])) {
                    return Err(ConfigError::new("thin_layer.eps", "must be strictly decreasing"));
                }
                if !self.thin_layer.perturbation_amplitude.is_finite() {
                    return Err(ConfigError::new("thin_layer.perturbation_amplitude", "must be finite"));
                }
                if !self.thin_layer.perturbation_exponent.is_finite() {
                    return Err(ConfigError::new("thin_layer.perturbation_exponent", "must be finite"));
                }
                if matches!(self.u0, VelocitySpec::Constant { .. }) {
                    return Err(ConfigError::new("u0", "the strip study starts from rest"));
                }
                if matches!(self.phi0, InitialSpec::File { .. } | InitialSpec::Random { .. }) {
                    return Err(ConfigError::new("phi0", "the strip study needs a constant or cosine midline profile"));
                }
                if let InitialSpec::Cosine { modes, .. } = &self.phi0 {
                    if modes.iter().any(|m| m.ky != 0) {
                        return Err(ConfigError::new("phi0.modes", "midline profiles depend on x only"));
                    }
                }
            }
            Scenario::Suite => {}
        }
        Ok(())
    }
}
