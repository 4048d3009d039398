//! Python bindings: grids, the memory kernel, Cahn-Hilliard and coupled
//! Hele-Shaw-Cahn-Hilliard steppers, and the scenario runner.
//! Fields cross the boundary as flat lists in node order (x fastest).

use std::path::Path;

use hsch_core::config::{Scenario, SimConfig};
use hsch_core::grid::{Bc, Grid, ScalarField, VectorField};
use hsch_core::hsch::{hsch_step, Forcing, HschParams, HschState, VelocityLaw};
use hsch_core::kernel::{kernel_series, MemoryKernel};
use hsch_core::phase_field::{ch_step, energy, mean, ChParams, ChState, Potential};
use hsch_core::{runner, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NoConvergence { .. } | Error::NonFinite | Error::IllConditioned { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[staticmethod]
    fn interval(min: f64, max: f64, cells: usize) -> PyResult<Self> {
        Grid::interval(min, max, cells).map(PyGrid).map_err(to_py)
    }

    #[staticmethod]
    fn rectangle(x: (f64, f64), y: (f64, f64), cells: (usize, usize)) -> PyResult<Self> {
        Grid::rectangle(x, y, cells).map(PyGrid).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Node counts per axis.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.nx(), self.0.ny())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn coords(&self) -> Vec<(f64, f64)> {
        (0..self.0.ny())
            .flat_map(|j| (0..self.0.nx()).map(move |i| (i, j)))
            .map(|(i, j)| self.0.node_coords(i, j))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Grid(dim={}, shape={:?})", self.0.dim(), self.shape())
    }
}

#[pyclass(name = "MemoryKernel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel(MemoryKernel);

#[pymethods]
impl PyKernel {
    /// Eigenseries kernel of the cell problem with viscosity ratio `alpha`.
    #[staticmethod]
    #[pyo3(signature = (alpha, n_modes = 64, dim = 2))]
    fn series(alpha: f64, n_modes: usize, dim: usize) -> PyResult<Self> {
        kernel_series(alpha, n_modes, dim).map(PyKernel).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (weight, rate, dim = 2))]
    fn single_mode(weight: f64, rate: f64, dim: usize) -> PyResult<Self> {
        MemoryKernel::single_mode(dim, weight, rate).map(PyKernel).map_err(to_py)
    }

    /// Scalar kernel `g(t)`.
    fn g(&self, t: f64) -> f64 {
        self.0.g(t)
    }

    /// Full matrix `G(t)` as nested lists.
    fn matrix(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.0.evaluate(t).map_err(to_py)?;
        let d = self.0.dim();
        Ok((0..d).map(|i| (0..d).map(|j| m.get(i, j)).collect()).collect())
    }

    #[getter]
    fn truncation_error_bound(&self) -> f64 {
        self.0.truncation_error_bound
    }

    #[getter]
    fn min_rate(&self) -> f64 {
        self.0.min_rate()
    }
}

fn ch_params(beta: f64, lambda: f64, quartic: Option<[f64; 5]>) -> PyResult<ChParams> {
    let pot = match quartic {
        Some(c) => Potential::quartic(c).map_err(to_py)?,
        None => Potential::landau(),
    };
    ChParams::new(beta, lambda, pot).map_err(to_py)
}

fn phase(grid: &PyGrid, phi: Vec<f64>) -> PyResult<ScalarField> {
    ScalarField::from_values(grid.0, Bc::Neumann0, phi).map_err(to_py)
}

/// Convective-free Cahn-Hilliard stepper with homogeneous Neumann walls.
#[pyclass(name = "CahnHilliard")]
struct PyCahnHilliard {
    state: ChState,
    params: ChParams,
}

#[pymethods]
impl PyCahnHilliard {
    #[new]
    #[pyo3(signature = (grid, phi, beta = 0.01, lambda_ = 1.0, quartic = None))]
    fn new(grid: &PyGrid, phi: Vec<f64>, beta: f64, lambda_: f64, quartic: Option<[f64; 5]>) -> PyResult<Self> {
        let params = ch_params(beta, lambda_, quartic)?;
        let state = ChState::new(phase(grid, phi)?, &params).map_err(to_py)?;
        Ok(Self { state, params })
    }

    #[pyo3(signature = (dt, steps = 1))]
    fn step(&mut self, py: Python<'_>, dt: f64, steps: usize) -> PyResult<()> {
        let params = self.params;
        let mut st = self.state.clone();
        st = py
            .detach(|| {
                for _ in 0..steps {
                    st = ch_step(&st, None, dt, &params)?;
                }
                Ok(st)
            })
            .map_err(to_py)?;
        self.state = st;
        Ok(())
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.state.phi.values.clone()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.state.mu.values.clone()
    }

    fn mean(&self) -> f64 {
        mean(&self.state.phi)
    }

    fn energy(&self) -> PyResult<f64> {
        energy(&self.state.phi, None, &self.params).map_err(to_py)
    }
}

/// Coupled nonlocal Hele-Shaw-Cahn-Hilliard solver with constant body force.
#[pyclass(name = "HeleShaw")]
struct PyHeleShaw {
    state: HschState,
    params: HschParams,
    forcing: Forcing,
}

#[pymethods]
impl PyHeleShaw {
    /// `permeability` switches from the memory law to the local Darcy law.
    #[new]
    #[pyo3(signature = (grid, phi, kernel, dt, beta = 0.01, lambda_ = 1.0, force = (0.0, 0.0), permeability = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        grid: &PyGrid,
        phi: Vec<f64>,
        kernel: &PyKernel,
        dt: f64,
        beta: f64,
        lambda_: f64,
        force: (f64, f64),
        permeability: Option<f64>,
    ) -> PyResult<Self> {
        let mut params = HschParams::new(ch_params(beta, lambda_, None)?);
        if let Some(k) = permeability {
            params.law = VelocityLaw::Local { permeability: k };
        }
        let forcing = if force == (0.0, 0.0) { Forcing::Zero } else { Forcing::Constant([force.0, force.1]) };
        let state = HschState::new(phase(grid, phi)?, None, &kernel.0, &forcing, dt, &params).map_err(to_py)?;
        Ok(Self { state, params, forcing })
    }

    #[pyo3(signature = (steps = 1))]
    fn step(&mut self, py: Python<'_>, steps: usize) -> PyResult<()> {
        let (params, forcing, dt) = (self.params, &self.forcing, self.state.dt);
        let mut st = self.state.clone();
        st = py
            .detach(|| {
                for _ in 0..steps {
                    st = hsch_step(st, forcing, dt, &params)?;
                }
                Ok(st)
            })
            .map_err(to_py)?;
        self.state = st;
        Ok(())
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.state.ch.phi.values.clone()
    }

    #[getter]
    fn pressure(&self) -> Vec<f64> {
        self.state.p.values.clone()
    }

    /// Edge velocities, one flat list per component.
    #[getter]
    fn velocity(&self) -> Vec<Vec<f64>> {
        self.state.u.components.clone()
    }

    fn max_velocity(&self) -> f64 {
        self.state.u.norm_inf()
    }

    fn energy(&self) -> PyResult<f64> {
        self.state.energy(&self.params).map_err(to_py)
    }
}

/// Runs one CLI scenario from a JSON config string and returns the summary
/// lines. Artifacts land in `out`.
#[pyfunction]
#[pyo3(signature = (scenario, config, out, base = "."))]
fn run_scenario(py: Python<'_>, scenario: &str, config: &str, out: &str, base: &str) -> PyResult<Vec<String>> {
    let scenario: Scenario = scenario.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
    let cfg = SimConfig::from_json(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let outcome = py.detach(|| runner::run(scenario, &cfg, Path::new(base), Path::new(out)));
    match outcome {
        Ok(o) => Ok(o.lines),
        Err(e) if e.exit_code() == 2 => Err(PyValueError::new_err(e.to_string())),
        Err(e) => Err(PyRuntimeError::new_err(e.to_string())),
    }
}

/// Divergence of an edge velocity field (flat components) at the nodes.
#[pyfunction]
fn divergence(grid: &PyGrid, components: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let v = VectorField::from_components(grid.0, components).map_err(to_py)?;
    hsch_core::grid::divergence(&v).map(|d| d.values).map_err(to_py)
}

#[pymodule]
fn hsch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyCahnHilliard>()?;
    m.add_class::<PyHeleShaw>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
