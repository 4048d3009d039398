//! Nonlocal Hele-Shaw-Cahn-Hilliard solver.
//!
//! Velocity law with memory:
//! `u(t) = G(t) u0 + (G * (h1 + mu grad phi - grad p))(t)`, `div u = 0`,
//! `u . n = 0`, coupled to the convective Cahn-Hilliard equation. Each step
//! forms `b = G(t) u0 + G * (h1 + mu grad phi)`, splits it as
//! `b = u + grad q` and recovers `p` from `q = G * p`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::convolution::{step_weights, ConvolutionState, StepWeights};
use crate::error::{Error, Result};
use crate::grid::{
    divergence_into, gradient_into, leray_project_with, Bc, Grid, PoissonOptions, ScalarField,
    VectorField,
};
use crate::kernel::MemoryKernel;
use crate::phase_field::{ch_step, edge_product, energy, mean, ChParams, ChState};

type ForcingFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

/// Body force `h1(t, x)`, sampled on the velocity edges.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant([f64; 2]),
    /// A fixed edge field.
    Field(VectorField),
    /// Piecewise linear in time between the given edge fields.
    Tabulated { times: Vec<f64>, fields: Vec<VectorField> },
    Function(ForcingFn),
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Constant(c) => write!(f, "Constant({c:?})"),
            Forcing::Field(_) => f.write_str("Field(..)"),
            Forcing::Tabulated { times, .. } => write!(f, "Tabulated({} samples)", times.len()),
            Forcing::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Forcing {
    pub fn function(f: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        Forcing::Function(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    pub fn sample(&self, grid: &Grid, t: f64) -> Result<VectorField> {
        let check = |v: &VectorField| -> Result<()> {
            if v.grid != *grid {
                return Err(Error::DimensionMismatch("forcing lives on another grid".into()));
            }
            Ok(())
        };
        let out = match self {
            Forcing::Zero => VectorField::zeros(*grid),
            Forcing::Constant(c) => {
                let mut v = VectorField::zeros(*grid);
                for (k, comp) in v.components.iter_mut().enumerate() {
                    comp.iter_mut().for_each(|x| *x = c[k]);
                }
                v
            }
            Forcing::Field(v) => {
                check(v)?;
                v.clone()
            }
            Forcing::Tabulated { times, fields } => {
                if times.is_empty() || times.len() != fields.len() {
                    return Err(Error::DimensionMismatch("forcing table is malformed".into()));
                }
                let last = *times.last().unwrap();
                if t < times[0] || t > last {
                    return Err(Error::OutOfRange { t, t_max: last });
                }
                let k = times.partition_point(|s| *s <= t).clamp(1, times.len().max(2) - 1);
                if times.len() == 1 {
                    check(&fields[0])?;
                    fields[0].clone()
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let s = (t - t0) / (t1 - t0);
                    check(&fields[k - 1])?;
                    check(&fields[k])?;
                    fields[k - 1].scaled(1.0 - s).axpy(s, &fields[k])
                }
            }
            Forcing::Function(f) => VectorField::from_fn(*grid, |x, y| f(t, x, y)),
        };
        if !out.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityLaw {
    /// Convolution with the memory kernel.
    Memory,
    /// Instantaneous Darcy law `u = K (h1 + mu grad phi - grad p)`.
    Local { permeability: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct HschParams {
    pub ch: ChParams,
    pub projection: PoissonOptions,
    pub law: VelocityLaw,
}

/// Below this instantaneous kernel weight the pressure recovery is refused.
pub const MIN_DECONVOLUTION_WEIGHT: f64 = 1e-8;

impl HschParams {
    pub fn new(ch: ChParams) -> Self {
        Self {
            ch,
            projection: PoissonOptions {
                tol: 1e-12,
                max_iter: 20_000,
                compat_tol: None,
            },
            law: VelocityLaw::Memory,
        }
    }
}

/// Running `q = G * p` for a scalar kernel, inverted one step at a time.
#[derive(Debug, Clone)]
struct PressureMemory {
    weights: Vec<f64>,
    steps: Vec<StepWeights>,
    integrals: Vec<Vec<f64>>,
    p_prev: Vec<f64>,
}

impl PressureMemory {
    fn new(kernel: &MemoryKernel, dt: f64, p0: Vec<f64>) -> Result<Self> {
        let modes = kernel.scalar_modes()?;
        Ok(Self {
            weights: modes.iter().map(|m| m.weight).collect(),
            steps: modes.iter().map(|m| step_weights(m.rate, dt)).collect(),
            integrals: vec![vec![0.0; p0.len()]; modes.len()],
            p_prev: p0,
        })
    }

    /// Finds `p(t + dt)` with `(G * p)(t + dt) = q` and commits it.
    fn deconvolve(&mut self, q: &[f64]) -> Result<Vec<f64>> {
        let denom: f64 = self.weights.iter().zip(&self.steps).map(|(w, s)| w * s.c_new).sum();
        if !(denom >= MIN_DECONVOLUTION_WEIGHT) {
            return Err(Error::IllConditioned { weight: denom });
        }
        let mut known = vec![0.0; q.len()];
        for ((w, s), j) in self.weights.iter().zip(&self.steps).zip(&self.integrals) {
            for ((k, ji), pi) in known.iter_mut().zip(j).zip(&self.p_prev) {
                *k += w * (s.decay * ji + s.c_old * pi);
            }
        }
        let p: Vec<f64> = q.iter().zip(&known).map(|(q, k)| (q - k) / denom).collect();
        self.commit(p.clone());
        Ok(p)
    }

    fn commit(&mut self, p: Vec<f64>) {
        for (s, j) in self.steps.iter().zip(&mut self.integrals) {
            for ((ji, po), pn) in j.iter_mut().zip(&self.p_prev).zip(&p) {
                *ji = s.decay * *ji + s.c_old * po + s.c_new * pn;
            }
        }
        self.p_prev = p;
    }

    /// Current `G * p`.
    fn value(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.p_prev.len()];
        for (w, j) in self.weights.iter().zip(&self.integrals) {
            for (o, v) in out.iter_mut().zip(j) {
                *o += w * v;
            }
        }
        out
    }
}

/// Per-step solver diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub projection_iterations: usize,
    /// `max |div u|`.
    pub div_u: f64,
    /// `max |G u0 + G * (h1 + mu grad phi - grad p) - u|` over the edges.
    pub darcy_residual: f64,
    pub mean_p: f64,
}

#[derive(Debug, Clone)]
pub struct HschState {
    pub ch: ChState,
    pub u: VectorField,
    pub p: ScalarField,
    /// `G * p`, the potential removed by the projection.
    pub q: ScalarField,
    pub u0: VectorField,
    pub t: f64,
    pub dt: f64,
    pub steps: usize,
    pub last: StepReport,
    kernel: MemoryKernel,
    conv: ConvolutionState,
    pressure: PressureMemory,
}

/// `h1 + mu_bar grad phi` on the edges.
pub fn driving_field(ch: &ChState, h1: &VectorField) -> VectorField {
    let g = ch.phi.grid;
    let mut grad = VectorField::zeros(g);
    gradient_into(&g, &ch.phi.values, &mut grad.components);
    let force = edge_product(&grad, &ch.mu.values);
    let mut out = h1.clone();
    for (o, f) in out.components.iter_mut().zip(force) {
        for (a, b) in o.iter_mut().zip(f) {
            *a += b;
        }
    }
    out
}

pub fn max_div(u: &VectorField) -> Result<f64> {
    let mut d = vec![0.0; u.grid.len()];
    divergence_into(&u.grid, &u.components, &vec![Bc::Dirichlet0; u.dim()], &mut d)?;
    Ok(d.iter().fold(0.0, |m, v| m.max(v.abs())))
}

fn zero_mean(mut f: ScalarField) -> ScalarField {
    let m = mean(&f);
    f.values.iter_mut().for_each(|v| *v -= m);
    f
}

impl HschState {
    /// `u0` is projected onto divergence-free fields once; `p(0)` solves the
    /// instantaneous pressure problem since `q(0) = 0` does not fix it.
    pub fn new(
        phi0: ScalarField,
        u0: Option<VectorField>,
        kernel: &MemoryKernel,
        h1: &Forcing,
        dt: f64,
        params: &HschParams,
    ) -> Result<Self> {
        let g = phi0.grid;
        if kernel.dim() != g.dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel is {}-dimensional, grid is {}-dimensional",
                kernel.dim(),
                g.dim()
            )));
        }
        kernel.scalar_modes()?;
        if let VelocityLaw::Local { permeability } = params.law {
            if !(permeability > 0.0 && permeability.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "permeability",
                    reason: format!("must be positive, got {permeability}"),
                });
            }
        }
        let ch = ChState::new(phi0, &params.ch)?;
        let u0 = match u0 {
            Some(v) => {
                if v.grid != g {
                    return Err(Error::DimensionMismatch("u0 lives on another grid".into()));
                }
                leray_project_with(&v, &params.projection, None)?.u
            }
            None => VectorField::zeros(g),
        };
        let bt = driving_field(&ch, &h1.sample(&g, 0.0)?);
        let direct = leray_project_with(&bt, &params.projection, None)?;
        let p = zero_mean(direct.q);
        let conv = ConvolutionState::new(kernel, dt, bt.components)?;
        let pressure = PressureMemory::new(kernel, dt, p.values.clone())?;
        let u = match params.law {
            VelocityLaw::Memory => u0.clone(),
            VelocityLaw::Local { permeability } => direct.u.scaled(permeability),
        };
        Ok(Self {
            ch,
            u,
            p,
            q: ScalarField::zeros(g, Bc::Neumann0),
            u0,
            t: 0.0,
            dt,
            steps: 0,
            last: StepReport::default(),
            kernel: kernel.clone(),
            conv,
            pressure,
        })
    }

    pub fn kernel(&self) -> &MemoryKernel {
        &self.kernel
    }

    pub fn grid(&self) -> Grid {
        self.ch.phi.grid
    }

    pub fn energy(&self, params: &HschParams) -> Result<f64> {
        energy(&self.ch.phi, Some(&self.u), &params.ch)
    }

    /// Advances the velocity and pressure to `t + dt` with `(phi, mu)` lagged.
    pub fn velocity_update(&mut self, h1: &Forcing, params: &HschParams) -> Result<StepReport> {
        let g = self.grid();
        let t1 = (self.steps + 1) as f64 * self.dt;
        let bt = driving_field(&self.ch, &h1.sample(&g, t1)?);
        let report = match params.law {
            VelocityLaw::Memory => {
                let conv = self.conv.step(bt.components, self.dt)?;
                let gt = self.kernel.g(t1);
                let mut b = self.u0.scaled(gt);
                for (bc, c) in b.components.iter_mut().zip(&conv) {
                    for (x, y) in bc.iter_mut().zip(c) {
                        *x += y;
                    }
                }
                let proj = leray_project_with(&b, &params.projection, Some(&self.q.values))?;
                let p = self.pressure.deconvolve(&proj.q.values)?;
                // residual of the velocity law with the recovered pressure
                let gp = self.pressure.value();
                let mut grad = VectorField::zeros(g);
                gradient_into(&g, &gp, &mut grad.components);
                let residual = b.axpy(-1.0, &grad).max_abs_diff(&proj.u);
                self.u = proj.u;
                self.q = proj.q;
                self.p = ScalarField::from_values(g, Bc::Neumann0, p)?;
                StepReport {
                    projection_iterations: proj.iterations,
                    div_u: max_div(&self.u)?,
                    darcy_residual: residual,
                    mean_p: mean(&self.p),
                }
            }
            VelocityLaw::Local { permeability } => {
                let proj = leray_project_with(&bt, &params.projection, Some(&self.p.values))?;
                self.u = proj.u.scaled(permeability);
                self.p = proj.q;
                self.q = self.p.scaled(permeability);
                StepReport {
                    projection_iterations: proj.iterations,
                    div_u: max_div(&self.u)?,
                    darcy_residual: 0.0,
                    mean_p: mean(&self.p),
                }
            }
        };
        self.last = report;
        Ok(report)
    }

    /// Pressure from the instantaneous problem `p = Q(h1 + mu grad phi)` at
    /// the current state, for comparison with the recovered one.
    pub fn direct_pressure(&self, h1: &Forcing, params: &HschParams) -> Result<ScalarField> {
        let bt = driving_field(&self.ch, &h1.sample(&self.grid(), self.t)?);
        Ok(zero_mean(leray_project_with(&bt, &params.projection, None)?.q))
    }
}

/// Velocity update with lagged `(phi, mu)`, then a Cahn-Hilliard step
/// advected by the new velocity.
pub fn hsch_step(mut state: HschState, h1: &Forcing, dt: f64, params: &HschParams) -> Result<HschState> {
    if (dt - state.dt).abs() > 1e-12 * state.dt {
        return Err(Error::StepMismatch {
            expected: state.dt,
            got: dt,
        });
    }
    state.velocity_update(h1, params)?;
    state.ch = ch_step(&state.ch, Some(&state.u), dt, &params.ch)?;
    state.steps += 1;
    state.t = state.steps as f64 * state.dt;
    state.ch.t = state.t;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceEntry {
    pub delta: f64,
    /// `sup_t ||phi_1 - phi_2||_2`.
    pub sup_diff: f64,
    /// `sup_diff / delta`, `None` for `delta = 0`.
    pub ratio: Option<f64>,
    /// Bitwise identity of the two trajectories.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub entries: Vec<DependenceEntry>,
}

impl DependenceReport {
    /// Ratio of the first two finite response ratios.
    pub fn response_agreement(&self) -> Option<f64> {
        let r: Vec<f64> = self.entries.iter().filter_map(|e| e.ratio).collect();
        (r.len() >= 2).then(|| r[0] / r[1])
    }
}

/// `phi` trajectory of one run, sampled after every step.
pub fn trajectory(
    phi0: ScalarField,
    kernel: &MemoryKernel,
    h1: &Forcing,
    dt: f64,
    steps: usize,
    params: &HschParams,
) -> Result<Vec<ScalarField>> {
    let mut st = HschState::new(phi0, None, kernel, h1, dt, params)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(st.ch.phi.clone());
    for _ in 0..steps {
        st = hsch_step(st, h1, dt, params)?;
        out.push(st.ch.phi.clone());
    }
    Ok(out)
}

/// Runs from `phi0` and from `phi0 + delta * perturbation` for each `delta`
/// and reports the response. Runs execute concurrently.
#[allow(clippy::too_many_arguments)]
pub fn continuous_dependence_test(
    phi0: &ScalarField,
    perturbation: &ScalarField,
    deltas: &[f64],
    kernel: &MemoryKernel,
    h1: &Forcing,
    dt: f64,
    steps: usize,
    params: &HschParams,
) -> Result<DependenceReport> {
    if perturbation.grid != phi0.grid {
        return Err(Error::DimensionMismatch("perturbation lives on another grid".into()));
    }
    let base = trajectory(phi0.clone(), kernel, h1, dt, steps, params)?;
    let entries = deltas
        .par_iter()
        .map(|&delta| {
            let start = phi0.axpy(delta, perturbation);
            let other = trajectory(start, kernel, h1, dt, steps, params)?;
            let mut sup: f64 = 0.0;
            let mut identical = true;
            for (a, b) in base.iter().zip(&other) {
                let d = a.axpy(-1.0, b);
                sup = sup.max(d.dot(&d).sqrt());
                identical &= a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
            }
            Ok(DependenceEntry {
                delta,
                sup_diff: sup,
                ratio: (delta != 0.0).then(|| sup / delta),
                identical,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DependenceReport { entries })
}
