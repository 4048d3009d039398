//! Transient Stokes-Cahn-Hilliard flow in the thin strip
//! `(a, b) x (-eps, eps)` with viscosity `alpha eps^2`, the thin-direction
//! average `M_eps` and the study of the `eps -> 0` limit.
//!
//! Velocities sit on the staggered edges. Edges tangential to a wall lie on
//! the wall itself and are removed from the unknowns, which imposes no-slip
//! exactly; normal velocities vanish at walls through the odd ghost values
//! of the divergence.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::RunLedger;
use crate::error::{Error, Result};
use crate::grid::{gradient_into, pcg, pcg_with, Bc, CgOptions, Grid, ScalarField, VectorField};
use crate::hsch::max_div;
use crate::phase_field::{ch_step, edge_product, energy, mean, ChParams, ChState};

/// Minimum number of cells across the strip.
pub const MIN_THIN_CELLS: usize = 16;

type Profile = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tangential body force `h = (h1(t, x), 0)`.
#[derive(Clone)]
pub enum StripForcing {
    Zero,
    Constant(f64),
    Function(Profile),
}

impl fmt::Debug for StripForcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StripForcing::Zero => f.write_str("Zero"),
            StripForcing::Constant(c) => write!(f, "Constant({c})"),
            StripForcing::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl StripForcing {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        StripForcing::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            StripForcing::Zero => 0.0,
            StripForcing::Constant(c) => *c,
            StripForcing::Function(f) => f(t, x),
        }
    }

    /// Values on the x-edges of a 1D grid (or the edge columns of a strip).
    fn on_x_edges(&self, grid: &Grid, t: f64) -> Vec<f64> {
        (0..grid.x.cells).map(|i| self.eval(t, grid.x.edge_coord(i))).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StripParams {
    pub alpha: f64,
    pub ch: ChParams,
    /// Relative residual target of the projection.
    pub projection_tol: f64,
    pub diffusion_tol: f64,
    pub max_iter: usize,
}

impl StripParams {
    pub fn new(alpha: f64, ch: ChParams) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be positive, got {alpha}"),
            });
        }
        Ok(Self {
            alpha,
            ch,
            projection_tol: 1e-11,
            diffusion_tol: 1e-13,
            max_iter: 50_000,
        })
    }
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StripStepReport {
    pub projection_iterations: usize,
    pub div_u: f64,
    /// `dt max|mu grad phi| / min(h)`; values above one flag the explicit
    /// coupling as under-resolved.
    pub coupling_cfl: f64,
    /// `dt max|u| / min(h)`.
    pub advective_cfl: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `dt alpha eps^2 ||grad u~||^2` of the viscous predictor.
    pub viscous_dissipation: f64,
    /// `dt ||grad mu~||^2` of the Cahn-Hilliard step.
    pub diffusive_dissipation: f64,
    /// `dt <h, u>`.
    pub forcing_work: f64,
    /// `||d_x M p - h1 - M(mu d_x phi)||^2` over the midline edges.
    pub pressure_relation_sq: f64,
}

impl StripStepReport {
    /// `E+ + dissipation - E - work`; at most zero for an exactly
    /// dissipative step.
    pub fn energy_defect(&self) -> f64 {
        self.energy_after + self.viscous_dissipation + self.diffusive_dissipation
            - self.energy_before
            - self.forcing_work
    }
}

#[derive(Debug, Clone)]
pub struct StripState {
    pub u: VectorField,
    /// Mean-zero pressure.
    pub p: ScalarField,
    pub ch: ChState,
    pub eps: f64,
    pub t: f64,
    pub steps: usize,
    pub last: StripStepReport,
    phi_potential: Vec<f64>,
}

fn check_strip(grid: &Grid) -> Result<(usize, usize)> {
    let ay = grid.y.ok_or_else(|| Error::DimensionMismatch("strip grids are two-dimensional".into()))?;
    if ay.cells < MIN_THIN_CELLS {
        return Err(Error::GridTooSmall {
            min: MIN_THIN_CELLS,
            got: ay.cells,
        });
    }
    Ok((grid.x.cells, ay.cells))
}

/// Zeroes the wall-tangential edges.
fn apply_mask(grid: &Grid, v: &mut [Vec<f64>]) {
    let (nx, nz) = (grid.x.cells, grid.y.map_or(0, |a| a.cells));
    for i in 0..nx {
        v[0][i] = 0.0;
        v[0][i + nz * nx] = 0.0;
    }
    for j in 0..nz {
        v[1][j * (nx + 1)] = 0.0;
        v[1][nx + j * (nx + 1)] = 0.0;
    }
}

/// Vector Laplacian on the unmasked edges with no-slip walls.
fn vector_laplacian(grid: &Grid, v: &[Vec<f64>], out: &mut [Vec<f64>]) {
    let (nx, nz) = (grid.x.cells, grid.y.map_or(0, |a| a.cells));
    let (ax, az) = (1.0 / (grid.hx() * grid.hx()), 1.0 / (grid.hy() * grid.hy()));
    // x-edges: columns 0..nx, rows 0..=nz; rows 0 and nz are walls
    let u = &v[0];
    let o = &mut out[0];
    o.iter_mut().for_each(|x| *x = 0.0);
    for j in 1..nz {
        for i in 0..nx {
            let k = i + j * nx;
            let c = u[k];
            let left = if i == 0 { -c } else { u[k - 1] };
            let right = if i + 1 == nx { -c } else { u[k + 1] };
            o[k] = ax * (left - 2.0 * c + right) + az * (u[k - nx] - 2.0 * c + u[k + nx]);
        }
    }
    // y-edges: columns 0..=nx, rows 0..nz; columns 0 and nx are walls
    let w = &v[1];
    let o = &mut out[1];
    o.iter_mut().for_each(|x| *x = 0.0);
    let s = nx + 1;
    for j in 0..nz {
        for i in 1..nx {
            let k = i + j * s;
            let c = w[k];
            let down = if j == 0 { -c } else { w[k - s] };
            let up = if j + 1 == nz { -c } else { w[k + s] };
            o[k] = ax * (w[k - 1] - 2.0 * c + w[k + 1]) + az * (down - 2.0 * c + up);
        }
    }
}

/// Diagonal of the vector Laplacian, without sign.
fn vector_laplacian_diag(grid: &Grid) -> Vec<Vec<f64>> {
    let (nx, nz) = (grid.x.cells, grid.y.map_or(0, |a| a.cells));
    let (ax, az) = (1.0 / (grid.hx() * grid.hx()), 1.0 / (grid.hy() * grid.hy()));
    let mut d = vec![vec![0.0; nx * (nz + 1)], vec![0.0; (nx + 1) * nz]];
    for j in 1..nz {
        for i in 0..nx {
            let xs = if i == 0 || i + 1 == nx { 3.0 } else { 2.0 };
            d[0][i + j * nx] = ax * xs + 2.0 * az;
        }
    }
    for j in 0..nz {
        for i in 1..nx {
            let zs = if j == 0 || j + 1 == nz { 3.0 } else { 2.0 };
            d[1][i + j * (nx + 1)] = 2.0 * ax + az * zs;
        }
    }
    d
}

/// Unmasked edge list `(node_a, node_b, w / h^2)` of the pressure operator
/// `D^T W M D`.
fn pressure_edges(grid: &Grid) -> Vec<(usize, usize, f64)> {
    let (nx, nz) = (grid.x.cells, grid.y.map_or(0, |a| a.cells));
    let n = nx + 1;
    let (hx, hz) = (grid.hx(), grid.hy());
    let mut edges = Vec::new();
    for j in 1..nz {
        for i in 0..nx {
            edges.push((i + j * n, i + 1 + j * n, hx * grid.wy(j) / (hx * hx)));
        }
    }
    for j in 0..nz {
        for i in 1..nx {
            edges.push((i + j * n, i + (j + 1) * n, grid.x.weight(i) * hz / (hz * hz)));
        }
    }
    edges
}

/// Solves `D^T W M D phi = D^T W v` with CG preconditioned by exact solves
/// along each thin column, and returns the masked gradient `M D phi` and
/// `phi`.
struct StripProjector {
    grid: Grid,
    edges: Vec<(usize, usize, f64)>,
    diag: Vec<f64>,
    /// per column: tridiagonal sub/super diagonal between rows j and j+1
    off: Vec<f64>,
    isolated: Vec<bool>,
}

impl StripProjector {
    fn new(grid: Grid) -> Self {
        let n = grid.len();
        let nx1 = grid.nx();
        let edges = pressure_edges(&grid);
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for &(a, b, c) in &edges {
            diag[a] += c;
            diag[b] += c;
            if b == a + nx1 {
                off[a] = -c;
            }
        }
        let isolated: Vec<bool> = diag.iter().map(|d| *d == 0.0).collect();
        for (d, iso) in diag.iter_mut().zip(&isolated) {
            if *iso {
                *d = 1.0;
            }
        }
        Self {
            grid,
            edges,
            diag,
            off,
            isolated,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &(a, b, c) in &self.edges {
            let f = c * (v[b] - v[a]);
            out[a] -= f;
            out[b] += f;
        }
    }

    /// Thomas solves along every column.
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let nx1 = self.grid.nx();
        let rows = self.grid.ny();
        let mut c = vec![0.0; rows];
        let mut d = vec![0.0; rows];
        for i in 0..nx1 {
            let at = |j: usize| i + j * nx1;
            let b0 = self.diag[at(0)];
            c[0] = self.off[at(0)] / b0;
            d[0] = r[at(0)] / b0;
            for j in 1..rows {
                let a = self.off[at(j - 1)];
                let m = self.diag[at(j)] - a * c[j - 1];
                c[j] = if j + 1 < rows { self.off[at(j)] / m } else { 0.0 };
                d[j] = (r[at(j)] - a * d[j - 1]) / m;
            }
            z[at(rows - 1)] = d[rows - 1];
            for j in (0..rows - 1).rev() {
                z[at(j)] = d[j] - c[j] * z[at(j + 1)];
            }
        }
    }

    fn project(&self, v: &mut VectorField, guess: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
        let g = self.grid;
        let (nx, nz) = (g.x.cells, g.y.map_or(0, |a| a.cells));
        let n = nx + 1;
        // b = D^T W v
        let mut b = vec![0.0; g.len()];
        let hx = g.hx();
        let hz = g.hy();
        for j in 1..nz {
            for i in 0..nx {
                let f = v.components[0][i + j * nx] * g.wy(j);
                b[i + j * n] -= f;
                b[i + 1 + j * n] += f;
            }
        }
        for j in 0..nz {
            for i in 1..nx {
                let f = v.components[1][i + j * n] * g.x.weight(i);
                b[i + j * n] -= f;
                b[i + (j + 1) * n] += f;
            }
        }
        let scale: Vec<f64> = g.node_weights().iter().map(|w| w * (1.0 / (hx * hx) + 1.0 / (hz * hz)).sqrt()).collect();
        let report = pcg_with(
            |x, out| self.apply(x, out),
            |r, z| self.precondition(r, z),
            &b,
            guess,
            &scale,
            &CgOptions { tol, max_iter, op_norm: 0.0 },
        )?;
        for j in 1..nz {
            for i in 0..nx {
                v.components[0][i + j * nx] -= (guess[i + 1 + j * n] - guess[i + j * n]) / hx;
            }
        }
        for j in 0..nz {
            for i in 1..nx {
                v.components[1][i + j * n] -= (guess[i + (j + 1) * n] - guess[i + j * n]) / hz;
            }
        }
        // corner nodes touch no unknown; give them their wall neighbour's value
        for (k, iso) in self.isolated.iter().enumerate() {
            if *iso {
                let j = k / n;
                guess[k] = if j == 0 { guess[k + n] } else { guess[k - n] };
            }
        }
        Ok(report.iterations)
    }
}

/// Strip grid `(a, b) x (-eps, eps)`.
pub fn strip_grid(a: f64, b: f64, eps: f64, cells: (usize, usize)) -> Result<Grid> {
    let g = Grid::strip(a, b, eps, cells)?;
    check_strip(&g)?;
    Ok(g)
}

/// `(1 / 2 eps) int f dzeta` by the trapezoid rule, on the midline grid.
pub fn m_eps(f: &ScalarField) -> Result<ScalarField> {
    let g = f.grid;
    let ay = g.y.ok_or_else(|| Error::DimensionMismatch("m_eps needs a two-dimensional field".into()))?;
    let line = Grid::interval(g.x.min, g.x.max, g.x.cells)?;
    let nx1 = g.nx();
    let mut values = vec![0.0; nx1];
    for j in 0..g.ny() {
        let w = g.wy(j) / ay.length();
        for (i, v) in values.iter_mut().enumerate() {
            *v += w * f.values[i + j * nx1];
        }
    }
    ScalarField::from_values(line, f.bc[0], values)
}

/// Thin-direction average of the x-edge component, on the midline edges.
fn m_eps_x_edges(grid: &Grid, comp: &[f64]) -> Vec<f64> {
    let nx = grid.x.cells;
    let len = grid.y.map_or(1.0, |a| a.length());
    let mut out = vec![0.0; nx];
    for j in 0..grid.ny() {
        let w = grid.wy(j) / len;
        for (i, o) in out.iter_mut().enumerate() {
            *o += w * comp[i + j * nx];
        }
    }
    out
}

/// Thin-direction average of the y-edge component, on the midline nodes.
fn m_eps_y_edges(grid: &Grid, comp: &[f64]) -> Vec<f64> {
    let n = grid.nx();
    let ay = grid.y.expect("strip grid");
    let mut out = vec![0.0; n];
    for j in 0..ay.cells {
        for (i, o) in out.iter_mut().enumerate() {
            *o += ay.spacing() / ay.length() * comp[i + j * n];
        }
    }
    out
}

fn edge_force(ch: &ChState) -> VectorField {
    let g = ch.phi.grid;
    let mut grad = VectorField::zeros(g);
    gradient_into(&g, &ch.phi.values, &mut grad.components);
    let comps = edge_product(&grad, &ch.mu.values);
    VectorField {
        grid: g,
        components: comps,
        bc: vec![Bc::Dirichlet0; 2],
    }
}

impl StripState {
    pub fn new(phi0: ScalarField, eps: f64, params: &StripParams) -> Result<Self> {
        let g = phi0.grid;
        check_strip(&g)?;
        let ch = ChState::new(phi0, &params.ch)?;
        Ok(Self {
            u: VectorField::zeros(g),
            p: ScalarField::zeros(g, Bc::Neumann0),
            ch,
            eps,
            t: 0.0,
            steps: 0,
            last: StripStepReport::default(),
            phi_potential: vec![0.0; g.len()],
        })
    }

    pub fn grid(&self) -> Grid {
        self.ch.phi.grid
    }

    pub fn energy(&self, params: &StripParams) -> Result<f64> {
        energy(&self.ch.phi, Some(&self.u), &params.ch)
    }
}

/// Reusable solver pieces for one strip grid.
pub struct StripSolver {
    grid: Grid,
    projector: StripProjector,
    lap_diag: Vec<Vec<f64>>,
}

impl StripSolver {
    pub fn new(grid: Grid) -> Result<Self> {
        check_strip(&grid)?;
        Ok(Self {
            grid,
            projector: StripProjector::new(grid),
            lap_diag: vector_laplacian_diag(&grid),
        })
    }

    /// One Chorin step for the velocity with explicit capillary force,
    /// followed by a Cahn-Hilliard step advected by the new velocity.
    pub fn step(&self, mut st: StripState, h1: &StripForcing, dt: f64, params: &StripParams) -> Result<StripState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        let g = self.grid;
        if st.grid() != g {
            return Err(Error::DimensionMismatch("state lives on another grid".into()));
        }
        let (nx, nz) = (g.x.cells, g.y.map_or(0, |a| a.cells));
        let t1 = st.t + dt;
        let nu = params.alpha * st.eps * st.eps;
        let hmin = g.hx().min(g.hy());
        let e_before = st.energy(params)?;

        // explicit force mu grad phi + h
        let force = edge_force(&st.ch);
        let coupling_cfl = dt * force.norm_inf() / hmin;
        let hx_line = h1.on_x_edges(&g, t1);
        let mut rhs = st.u.axpy(dt, &force);
        for j in 0..=nz {
            for i in 0..nx {
                rhs.components[0][i + j * nx] += dt * hx_line[i];
            }
        }
        apply_mask(&g, &mut rhs.components);
        if st.steps == 0 {
            // start the pressure from the gradient part of the initial force
            let mut f = rhs.clone();
            let mut q = vec![0.0; g.len()];
            self.projector.project(&mut f, &mut q, params.projection_tol, params.max_iter)?;
            st.p.values = q.iter().map(|v| v / dt).collect();
        }
        // incremental pressure correction: predict with the old pressure
        let mut gp = VectorField::zeros(g);
        gradient_into(&g, &st.p.values, &mut gp.components);
        apply_mask(&g, &mut gp.components);
        let rhs = rhs.axpy(-dt, &gp);

        // implicit viscous predictor, component by component
        let mut tilde = st.u.clone();
        let mut lap = vec![vec![0.0; g.edge_len(0)], vec![0.0; g.edge_len(1)]];
        let ones0 = vec![1.0; g.edge_len(0)];
        let ones1 = vec![1.0; g.edge_len(1)];
        for k in 0..2 {
            let diag: Vec<f64> = self.lap_diag[k].iter().map(|d| 1.0 + dt * nu * d).collect();
            let scale = if k == 0 { &ones0 } else { &ones1 };
            let mut x = tilde.components[k].clone();
            pcg(
                |v, out| {
                    let mut comps = vec![vec![0.0; g.edge_len(0)], vec![0.0; g.edge_len(1)]];
                    comps[k].copy_from_slice(v);
                    let mut o = vec![vec![0.0; g.edge_len(0)], vec![0.0; g.edge_len(1)]];
                    vector_laplacian(&g, &comps, &mut o);
                    for ((out, v), l) in out.iter_mut().zip(v).zip(&o[k]) {
                        *out = v - dt * nu * l;
                    }
                },
                &rhs.components[k],
                &mut x,
                &diag,
                scale,
                &CgOptions {
                    op_norm: 0.0,
                    tol: params.diffusion_tol,
                    max_iter: params.max_iter,
                },
            )?;
            tilde.components[k] = x;
        }
        apply_mask(&g, &mut tilde.components);
        vector_laplacian(&g, &tilde.components, &mut lap);
        let cell = g.hx() * g.hy();
        let grad_sq: f64 = -cell
            * tilde
                .components
                .iter()
                .zip(&lap)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .sum::<f64>();

        // projection
        let mut u = tilde;
        let iterations = self.projector.project(&mut u, &mut st.phi_potential, params.projection_tol, params.max_iter)?;
        apply_mask(&g, &mut u.components);
        u.bc = vec![Bc::Dirichlet0; 2];
        let mut p = st.p.clone();
        for (p, q) in p.values.iter_mut().zip(&st.phi_potential) {
            *p += q / dt;
        }
        let pm = mean(&p);
        p.values.iter_mut().for_each(|v| *v -= pm);

        // pressure relation on the midline: d_x M p - h1 - M(mu d_x phi)
        let mp = m_eps(&p)?;
        let mforce = m_eps_x_edges(&g, &force.components[0]);
        let hx = g.hx();
        let rel_sq: f64 = (0..nx)
            .map(|i| {
                let r = (mp.values[i + 1] - mp.values[i]) / hx - hx_line[i] - mforce[i];
                hx * r * r
            })
            .sum();

        // Cahn-Hilliard step with the new velocity
        let old = st.ch;
        let ch = ch_step(&old, Some(&u), dt, &params.ch)?;
        let pot = params.ch.potential;
        let mu_scheme: Vec<f64> = (0..g.len())
            .map(|k| {
                let (a, b) = (old.phi.values[k], ch.phi.values[k]);
                ch.mu.values[k] + params.ch.lambda * (pot.f(a) - pot.f(b)) + params.ch.stabilization * (b - a)
            })
            .collect();
        let mut gm = VectorField::zeros(g);
        gradient_into(&g, &mu_scheme, &mut gm.components);

        let mut work = 0.0;
        let w0 = g.edge_weights(0);
        for j in 0..=nz {
            for i in 0..nx {
                let k = i + j * nx;
                work += dt * w0[k] * hx_line[i] * u.components[0][k];
            }
        }
        let advective_cfl = dt * u.norm_inf() / hmin;
        st.ch = ch;
        st.u = u;
        st.p = p;
        st.steps += 1;
        st.t = t1;
        st.ch.t = t1;
        let e_after = st.energy(params)?;
        st.last = StripStepReport {
            projection_iterations: iterations,
            div_u: max_div(&st.u)?,
            coupling_cfl,
            advective_cfl,
            energy_before: e_before,
            energy_after: e_after,
            viscous_dissipation: dt * nu * grad_sq,
            diffusive_dissipation: dt * gm.dot(&gm),
            forcing_work: work,
            pressure_relation_sq: rel_sq,
        };
        Ok(st)
    }
}

/// Convenience wrapper building a solver for a single step.
pub fn strip_step(st: StripState, h1: &StripForcing, dt: f64, params: &StripParams) -> Result<StripState> {
    StripSolver::new(st.grid())?.step(st, h1, dt, params)
}

/// Midline initial profile `mean + sum_k a_k cos(k pi (x - a) / (b - a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineProfile {
    pub mean: f64,
    /// `(k, a_k)` pairs.
    pub modes: Vec<(u32, f64)>,
}

impl CosineProfile {
    pub fn eval(&self, a: f64, b: f64, x: f64) -> f64 {
        let s = (x - a) / (b - a);
        self.mean + self.modes.iter().map(|(k, c)| c * (*k as f64 * PI * s).cos()).sum::<f64>()
    }
}

/// Thin-direction structure added to the initial phase:
/// `amplitude eps^exponent cos(pi (x - a) / (b - a)) sin(pi zeta / (2 eps))`.
/// Odd in `zeta`, so `M_eps` of the initial data is the midline profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinPerturbation {
    pub amplitude: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub a: f64,
    pub b: f64,
    pub cells: (usize, usize),
    pub alpha: f64,
    pub ch: ChParams,
    pub dt: f64,
    pub t_end: f64,
    pub phi0: CosineProfile,
    pub perturbation: ThinPerturbation,
    pub h1: StripForcing,
}

impl StudyConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn initial_phase(&self, grid: Grid, eps: f64) -> ScalarField {
        let (a, b) = (self.a, self.b);
        let amp = self.perturbation.amplitude * eps.powf(self.perturbation.exponent);
        ScalarField::from_fn(grid, Bc::Neumann0, |x, z| {
            self.phi0.eval(a, b, x) + amp * (PI * (x - a) / (b - a)).cos() * (PI * z / (2.0 * eps)).sin()
        })
    }
}

/// Results of one strip run against the midline reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripRunSummary {
    pub eps: f64,
    /// `||M phi - phi_ref||_{L2(Q)}`.
    pub e_phi: f64,
    /// `||M u||_{L2(Q)}`.
    pub e_u: f64,
    /// `||d_x M p - h1 - M(mu d_x phi)||_{L2(Q)}`.
    pub r_p: f64,
    /// `eps^{-1/2}` times `||u||_{Linf L2}`, `||phi||_{Linf H1}`,
    /// `||mu||_{L2 H1}`, `||p||_{L2 L2}`.
    pub scaled_norms: [f64; 4],
    pub mass_drift: f64,
    pub max_energy_defect: f64,
    pub max_div_u: f64,
    pub max_coupling_cfl: f64,
    pub steps: usize,
    pub ledger: RunLedger,
}

pub const SCALED_NORM_NAMES: [&str; 4] = ["u_linf_l2", "phi_linf_h1", "mu_l2_h1", "p_l2_l2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub runs: Vec<StripRunSummary>,
    /// Max over `eps` divided by min over `eps` of each scaled norm.
    pub scaled_norm_ratios: [f64; 4],
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

impl ConvergenceReport {
    pub fn e_phi(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.e_phi).collect()
    }

    pub fn e_u(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.e_u).collect()
    }

    pub fn r_p(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.r_p).collect()
    }

    pub fn e_u_decreasing(&self) -> bool {
        strictly_decreasing(&self.e_u())
    }

    pub fn e_phi_decreasing(&self) -> bool {
        strictly_decreasing(&self.e_phi())
    }

    pub fn r_p_decreasing(&self) -> bool {
        strictly_decreasing(&self.r_p())
    }

    /// Columns `eps,e_phi,e_u,r_p,<scaled norms>`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["eps", "e_phi", "e_u", "r_p"];
        header.extend(SCALED_NORM_NAMES);
        let err = |e: csv::Error| Error::InvalidParameter {
            name: "report",
            reason: e.to_string(),
        };
        w.write_record(&header).map_err(err)?;
        for r in &self.runs {
            let mut rec = vec![r.eps, r.e_phi, r.e_u, r.r_p];
            rec.extend(r.scaled_norms);
            w.write_record(rec.iter().map(|v| v.to_string())).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter {
            name: "report",
            reason: e.to_string(),
        })?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidParameter {
            name: "report",
            reason: e.to_string(),
        })
    }
}

/// Midline Cahn-Hilliard reference `phi_0(t_n)` for `n = 0..=steps`.
pub fn midline_reference(cfg: &StudyConfig) -> Result<Vec<ScalarField>> {
    let line = Grid::interval(cfg.a, cfg.b, cfg.cells.0)?;
    let phi = ScalarField::from_fn(line, Bc::Neumann0, |x, _| cfg.phi0.eval(cfg.a, cfg.b, x));
    let mut st = ChState::new(phi, &cfg.ch)?;
    let mut out = vec![st.phi.clone()];
    for _ in 0..cfg.steps() {
        st = ch_step(&st, None, cfg.dt, &cfg.ch)?;
        out.push(st.phi.clone());
    }
    Ok(out)
}

fn h1_norm_sq(f: &ScalarField) -> f64 {
    let mut grad = VectorField::zeros(f.grid);
    gradient_into(&f.grid, &f.values, &mut grad.components);
    f.dot(f) + grad.dot(&grad)
}

/// Runs the strip solver for one `eps` and measures it against `reference`.
pub fn strip_run(cfg: &StudyConfig, eps: f64, reference: &[ScalarField]) -> Result<StripRunSummary> {
    let params = StripParams::new(cfg.alpha, cfg.ch)?;
    let grid = strip_grid(cfg.a, cfg.b, eps, cfg.cells)?;
    let solver = StripSolver::new(grid)?;
    let mut st = StripState::new(cfg.initial_phase(grid, eps), eps, &params)?;
    let steps = cfg.steps();
    if reference.len() != steps + 1 {
        return Err(Error::DimensionMismatch("reference has the wrong length".into()));
    }
    let line = reference[0].grid;
    let hx = grid.hx();
    let m0 = mean(&st.ch.phi);
    let mut ledger = RunLedger::new([
        "mass",
        "energy",
        "u_l2",
        "div_u",
        "energy_defect",
        "e_phi_sq",
        "m_u_sq",
        "r_p_sq",
    ])
    .with_meta("eps", eps.to_string());

    // time integrals by the trapezoid rule over the step samples
    let (mut e_phi, mut e_u, mut r_p, mut mu_sq, mut p_sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut u_max: f64 = 0.0;
    let mut phi_max = h1_norm_sq(&st.ch.phi).sqrt();
    let (mut defect, mut div, mut cfl) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    let mut mass_drift: f64 = 0.0;
    let dphi0 = m_eps(&st.ch.phi)?.axpy(-1.0, &reference[0]);
    let mut prev_phi = dphi0.dot(&dphi0);
    let mut prev_mu = h1_norm_sq(&st.ch.mu);
    let mut prev_u = 0.0;
    for n in 1..=steps {
        st = solver.step(st, &cfg.h1, cfg.dt, &params)?;
        let d = m_eps(&st.ch.phi)?.axpy(-1.0, &reference[n]);
        let cur_phi = d.dot(&d);
        let mux = m_eps_x_edges(&grid, &st.u.components[0]);
        let muz = m_eps_y_edges(&grid, &st.u.components[1]);
        let cur_u = mux.iter().map(|v| hx * v * v).sum::<f64>() + ScalarField::from_values(line, Bc::Neumann0, muz.iter().map(|v| v * v).collect())?.integral();
        let cur_mu = h1_norm_sq(&st.ch.mu);
        let cur_p = st.p.dot(&st.p);
        let r = st.last;
        let half = 0.5 * cfg.dt;
        e_phi += half * (prev_phi + cur_phi);
        e_u += half * (prev_u + cur_u);
        // the pressure relation is only defined after a step
        r_p += cfg.dt * r.pressure_relation_sq;
        mu_sq += half * (prev_mu + cur_mu);
        p_sq += cfg.dt * cur_p;
        u_max = u_max.max(st.u.norm_l2());
        phi_max = phi_max.max(h1_norm_sq(&st.ch.phi).sqrt());
        defect = defect.max(r.energy_defect());
        div = div.max(r.div_u);
        cfl = cfl.max(r.coupling_cfl);
        let m = mean(&st.ch.phi);
        mass_drift = mass_drift.max((m - m0).abs());
        ledger.push(
            st.t,
            vec![m, r.energy_after, st.u.norm_l2(), r.div_u, r.energy_defect(), cur_phi, cur_u, r.pressure_relation_sq],
        )?;
        (prev_phi, prev_u, prev_mu) = (cur_phi, cur_u, cur_mu);
    }
    let s = eps.powf(-0.5);
    Ok(StripRunSummary {
        eps,
        e_phi: e_phi.sqrt(),
        e_u: e_u.sqrt(),
        r_p: r_p.sqrt(),
        scaled_norms: [s * u_max, s * phi_max, s * mu_sq.sqrt(), s * p_sq.sqrt()],
        mass_drift,
        max_energy_defect: defect,
        max_div_u: div,
        max_coupling_cfl: cfl,
        steps,
        ledger,
    })
}

/// Runs every `eps` concurrently against one midline reference.
pub fn convergence_study(eps_list: &[f64], cfg: &StudyConfig) -> Result<ConvergenceReport> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "eps_list",
            reason: "needs positive thicknesses".into(),
        });
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter {
            name: "eps_list",
            reason: "must be strictly decreasing".into(),
        });
    }
    let reference = midline_reference(cfg)?;
    let runs = eps_list
        .par_iter()
        .map(|&eps| strip_run(cfg, eps, &reference))
        .collect::<Result<Vec<_>>>()?;
    let mut ratios = [0.0; 4];
    for (k, r) in ratios.iter_mut().enumerate() {
        let vals: Vec<f64> = runs.iter().map(|s| s.scaled_norms[k]).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        *r = max / min;
    }
    Ok(ConvergenceReport {
        runs,
        scaled_norm_ratios: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gradient;

    fn params() -> StripParams {
        StripParams::new(1.0, ChParams::landau(0.01, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn m_eps_examples() {
        let eps = 0.1;
        let g = strip_grid(0.0, 1.0, eps, (8, 16)).unwrap();
        let c = m_eps(&ScalarField::constant(g, Bc::Neumann0, 2.5)).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let odd = m_eps(&ScalarField::from_fn(g, Bc::Neumann0, |_, z| z)).unwrap();
        assert!(odd.norm_inf() < 1e-16);
        let sq = m_eps(&ScalarField::from_fn(g, Bc::Neumann0, |_, z| z * z)).unwrap();
        // trapezoid error (b - a) h^2 f'' / 12 over the length 2 eps
        let h = 2.0 * eps / 16.0;
        for v in &sq.values {
            assert!((v - eps * eps / 3.0).abs() <= h * h / 6.0 + 1e-15);
        }
    }

    #[test]
    fn m_eps_commutes_with_d_x() {
        let g = strip_grid(0.0, 2.0, 0.2, (20, 16)).unwrap();
        let f = ScalarField::from_fn(g, Bc::Neumann0, |x, z| (x * 3.0).sin() * (1.0 + z) + z * z * x);
        let gx = gradient(&f).unwrap();
        let lhs = m_eps_x_edges(&g, &gx.components[0]);
        let rhs = gradient(&m_eps(&f).unwrap()).unwrap();
        for (a, b) in lhs.iter().zip(&rhs.components[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_makes_masked_fields_solenoidal() {
        let g = strip_grid(0.0, 2.0, 0.1, (24, 16)).unwrap();
        let proj = StripProjector::new(g);
        let mut v = VectorField::from_fn(g, |x, z| [(3.0 * x).sin() + z * 10.0, (x * z * 20.0).cos()]);
        apply_mask(&g, &mut v.components);
        let mut phi = vec![0.0; g.len()];
        proj.project(&mut v, &mut phi, 1e-12, 10_000).unwrap();
        let scale = 1.0 / g.hy();
        assert!(max_div(&v).unwrap() < 1e-9 * scale, "{}", max_div(&v).unwrap());
        // cross-section fluxes vanish
        let flux = m_eps_x_edges(&g, &v.components[0]);
        assert!(flux.iter().all(|f| f.abs() < 1e-10));
    }

    #[test]
    fn well_state_is_stationary() {
        let p = params();
        let g = strip_grid(0.0, 1.0, 0.1, (16, 16)).unwrap();
        let solver = StripSolver::new(g).unwrap();
        let mut st = StripState::new(ScalarField::constant(g, Bc::Neumann0, 1.0), 0.1, &p).unwrap();
        for _ in 0..5 {
            st = solver.step(st, &StripForcing::Zero, 1e-3, &p).unwrap();
        }
        assert_eq!(st.u.norm_inf(), 0.0);
        assert!(st.ch.phi.values.iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn midline_data_stays_one_dimensional() {
        let p = params();
        let eps = 0.1;
        let g = strip_grid(0.0, 1.0, eps, (32, 16)).unwrap();
        let solver = StripSolver::new(g).unwrap();
        let phi0 = |x: f64| 0.2 * (PI * x).cos();
        let line = Grid::interval(0.0, 1.0, 32).unwrap();
        let h1 = StripForcing::function(|_, x| x.sin());
        let run = |dt: f64| {
            let mut st = StripState::new(ScalarField::from_fn(g, Bc::Neumann0, |x, _| phi0(x)), eps, &p).unwrap();
            let mut reference = ChState::new(ScalarField::from_fn(line, Bc::Neumann0, |x, _| phi0(x)), &p.ch).unwrap();
            for _ in 0..(0.02 / dt).round() as usize {
                st = solver.step(st, &h1, dt, &p).unwrap();
                reference = ch_step(&reference, None, dt, &p.ch).unwrap();
            }
            let d = m_eps(&st.ch.phi).unwrap().axpy(-1.0, &reference.phi);
            (st.u.norm_inf(), d.norm_inf())
        };
        // the force is a pure pressure gradient; only the pressure lag drives flow
        let (u1, d1) = run(1e-3);
        let (u2, d2) = run(5e-4);
        assert!(u1 < 1e-6 && d1 < 1e-9 && d2 < 1e-9, "{u1} {d1} {d2}");
        assert!(u2 < u1 / 1.8, "{u1} {u2}");
    }

    #[test]
    fn perturbed_run_conserves_mass_and_balances_energy() {
        let p = params();
        let eps = 0.1;
        let g = strip_grid(0.0, 1.0, eps, (32, 16)).unwrap();
        let solver = StripSolver::new(g).unwrap();
        let phi = ScalarField::from_fn(g, Bc::Neumann0, |x, z| {
            0.2 * (PI * x).cos() + 0.5 * eps * (PI * x).cos() * (PI * z / (2.0 * eps)).sin()
        });
        let mut st = StripState::new(phi, eps, &p).unwrap();
        let m0 = mean(&st.ch.phi);
        let h1 = StripForcing::Constant(0.5);
        for _ in 0..50 {
            st = solver.step(st, &h1, 1e-3, &p).unwrap();
            assert!((mean(&st.ch.phi) - m0).abs() < 1e-10);
            let r = st.last;
            assert!(r.div_u <= 1e-9 * st.u.norm_inf() / g.hy(), "{r:?}");
        }
        assert!(st.u.norm_inf() > 0.0);
        assert!(m_eps_x_edges(&g, &st.u.components[0]).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn thin_grids_are_required() {
        assert!(strip_grid(0.0, 1.0, 0.1, (16, 8)).is_err());
        assert!(convergence_study(&[0.1, 0.2], &StudyConfig {
            a: 0.0,
            b: 1.0,
            cells: (16, 16),
            alpha: 1.0,
            ch: ChParams::landau(0.01, 1.0).unwrap(),
            dt: 1e-3,
            t_end: 1e-2,
            phi0: CosineProfile { mean: 0.0, modes: vec![] },
            perturbation: ThinPerturbation { amplitude: 0.0, exponent: 1.0 },
            h1: StripForcing::Zero,
        })
        .is_err());
    }
}
