//! Uniform node-centered grids and the discrete fields living on them.
//!
//! Scalars live on grid nodes. Vector components live on edge midpoints:
//! component `k` sits halfway between two nodes that are neighbours along
//! axis `k` (a staggered layout). Integrals use the trapezoid rule, so the
//! boundary nodes carry half weight.
//!
//! With this layout `divergence(gradient(f))` is exactly the compact
//! 3/5-point `laplacian(f)`, and `gradient` and `-divergence` are adjoint
//! under the weighted inner products.

mod ops;
mod solve;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{divergence, gradient, laplacian};
pub(crate) use ops::{apply_laplacian, divergence_into, gradient_into};
pub use solve::{
    leray_project, leray_project_with, solve_neumann_poisson, solve_neumann_poisson_with,
    PoissonOptions, PoissonSolution, Projection,
};
pub(crate) use solve::{pcg, pcg_with, CgOptions};

/// Minimum number of cells along every axis.
pub const MIN_CELLS: usize = 4;

/// One axis of a uniform grid with `cells + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, cells: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::InvalidExtent { min, max });
        }
        if cells < MIN_CELLS {
            return Err(Error::GridTooSmall {
                min: MIN_CELLS,
                got: cells,
            });
        }
        Ok(Self { min, max, cells })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.cells as f64
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    /// Midpoint between node `i` and node `i + 1`.
    #[inline]
    pub fn edge_coord(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.spacing()
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i == self.cells {
            0.5 * h
        } else {
            h
        }
    }
}

/// A 1D interval or a 2D rectangle (the thin strip is a 2D rectangle with an
/// anisotropic cell count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x: Axis,
    pub y: Option<Axis>,
}

impl Grid {
    pub fn interval(min: f64, max: f64, cells: usize) -> Result<Self> {
        Ok(Self {
            x: Axis::new(min, max, cells)?,
            y: None,
        })
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), cells: (usize, usize)) -> Result<Self> {
        Ok(Self {
            x: Axis::new(x.0, x.1, cells.0)?,
            y: Some(Axis::new(y.0, y.1, cells.1)?),
        })
    }

    /// The strip `(a, b) x (-eps, eps)`.
    pub fn strip(a: f64, b: f64, eps: f64, cells: (usize, usize)) -> Result<Self> {
        Self::rectangle((a, b), (-eps, eps), cells)
    }

    pub fn dim(&self) -> usize {
        if self.y.is_some() {
            2
        } else {
            1
        }
    }

    pub fn axis(&self, k: usize) -> Option<&Axis> {
        match k {
            0 => Some(&self.x),
            1 => self.y.as_ref(),
            _ => None,
        }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.x.nodes()
    }

    /// Node count along y; 1 for an interval.
    #[inline]
    pub fn ny(&self) -> usize {
        self.y.map_or(1, |a| a.nodes())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + j * self.nx()
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.x.spacing()
    }

    /// y spacing; 1 for an interval so that weights reduce to the 1D rule.
    #[inline]
    pub fn hy(&self) -> f64 {
        self.y.map_or(1.0, |a| a.spacing())
    }

    #[inline]
    pub fn wy(&self, j: usize) -> f64 {
        self.y.map_or(1.0, |a| a.weight(j))
    }

    #[inline]
    pub fn node_weight(&self, i: usize, j: usize) -> f64 {
        self.x.weight(i) * self.wy(j)
    }

    /// Trapezoid weights for every node, in storage order.
    pub fn node_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                w.push(self.node_weight(i, j));
            }
        }
        w
    }

    /// Measure of the domain (length or area).
    pub fn measure(&self) -> f64 {
        self.x.length() * self.y.map_or(1.0, |a| a.length())
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x.coord(i), self.y.map_or(0.0, |a| a.coord(j)))
    }

    /// Number of edges carrying vector component `k`.
    pub fn edge_len(&self, k: usize) -> usize {
        match k {
            0 => self.x.cells * self.ny(),
            _ => self.nx() * self.y.map_or(0, |a| a.cells),
        }
    }

    /// (columns, rows) of the edge array for component `k`.
    pub fn edge_shape(&self, k: usize) -> (usize, usize) {
        match k {
            0 => (self.x.cells, self.ny()),
            _ => (self.nx(), self.y.map_or(0, |a| a.cells)),
        }
    }

    pub fn edge_weights(&self, k: usize) -> Vec<f64> {
        let (cols, rows) = self.edge_shape(k);
        let mut w = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                w.push(match k {
                    0 => self.hx() * self.wy(j),
                    _ => self.x.weight(i) * self.hy(),
                });
            }
        }
        w
    }

    /// Physical position of edge `(i, j)` of component `k`.
    pub fn edge_coords(&self, k: usize, i: usize, j: usize) -> (f64, f64) {
        match k {
            0 => (self.x.edge_coord(i), self.y.map_or(0.0, |a| a.coord(j))),
            _ => (
                self.x.coord(i),
                self.y.map_or(0.0, |a| a.edge_coord(j)),
            ),
        }
    }
}

/// Boundary treatment along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bc {
    /// Homogeneous Neumann: mirror ghosts.
    Neumann0,
    /// Homogeneous Dirichlet: boundary nodes hold zero, odd-reflection ghosts.
    Dirichlet0,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Boundary condition per axis (entry 1 is ignored on intervals).
    pub bc: [Bc; 2],
}

impl ScalarField {
    pub fn zeros(grid: Grid, bc: Bc) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            bc: [bc, bc],
        }
    }

    pub fn constant(grid: Grid, bc: Bc, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
            bc: [bc, bc],
        }
    }

    pub fn from_values(grid: Grid, bc: Bc, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            grid,
            values,
            bc: [bc, bc],
        })
    }

    /// Samples `f(x, y)` at the nodes. Dirichlet boundary nodes are zeroed.
    pub fn from_fn(grid: Grid, bc: Bc, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn_mixed(grid, [bc, bc], f)
    }

    pub fn from_fn_mixed(grid: Grid, bc: [Bc; 2], f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.node_coords(i, j);
                values.push(f(x, y));
            }
        }
        let mut out = Self { grid, values, bc };
        out.enforce_dirichlet();
        out
    }

    pub fn with_bc(mut self, bc: [Bc; 2]) -> Self {
        self.bc = bc;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Zeroes boundary nodes on Dirichlet axes.
    pub fn enforce_dirichlet(&mut self) {
        let g = self.grid;
        if self.bc[0] == Bc::Dirichlet0 {
            for j in 0..g.ny() {
                self.values[g.idx(0, j)] = 0.0;
                self.values[g.idx(g.nx() - 1, j)] = 0.0;
            }
        }
        if g.dim() == 2 && self.bc[1] == Bc::Dirichlet0 {
            for i in 0..g.nx() {
                self.values[g.idx(i, 0)] = 0.0;
                self.values[g.idx(i, g.ny() - 1)] = 0.0;
            }
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Trapezoid integral over the domain.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny() {
            let wy = g.wy(j);
            let mut row = 0.0;
            for i in 0..g.nx() {
                row += g.x.weight(i) * self.values[g.idx(i, j)];
            }
            s += wy * row;
        }
        s
    }

    /// Weighted inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        weighted_dot(&self.grid, &self.values, &other.values)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Self {
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o += a * v;
        }
        out
    }
}

pub(crate) fn weighted_dot(g: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..g.ny() {
        let mut row = 0.0;
        for i in 0..g.nx() {
            let k = g.idx(i, j);
            row += g.x.weight(i) * a[k] * b[k];
        }
        s += g.wy(j) * row;
    }
    s
}

/// Staggered vector field: component `k` lives on the edges along axis `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub components: Vec<Vec<f64>>,
    /// Normal-flux treatment per component at the boundary of its own axis.
    pub bc: Vec<Bc>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let components = (0..grid.dim())
            .map(|k| vec![0.0; grid.edge_len(k)])
            .collect();
        Self {
            grid,
            components,
            bc: vec![Bc::Dirichlet0; grid.dim()],
        }
    }

    /// Samples `f(x, y) -> [fx, fy]` at each component's edge midpoints.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.dim() {
            let (cols, rows) = grid.edge_shape(k);
            for j in 0..rows {
                for i in 0..cols {
                    let (x, y) = grid.edge_coords(k, i, j);
                    out.components[k][i + j * cols] = f(x, y)[k];
                }
            }
        }
        out
    }

    pub fn from_components(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for (k, c) in components.iter().enumerate() {
            if c.len() != grid.edge_len(k) {
                return Err(Error::DimensionMismatch(format!(
                    "component {k}: expected {} values, got {}",
                    grid.edge_len(k),
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self {
            grid,
            components,
            bc: vec![Bc::Dirichlet0; grid.dim()],
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim() {
            let w = self.grid.edge_weights(k);
            s += w
                .iter()
                .zip(&self.components[k])
                .zip(&other.components[k])
                .map(|((w, a), b)| w * a * b)
                .sum::<f64>();
        }
        s
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.components
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.components.iter_mut().flatten().for_each(|v| *v *= a);
        out
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &VectorField) -> Self {
        let mut out = self.clone();
        for (oc, vc) in out.components.iter_mut().zip(&other.components) {
            for (o, v) in oc.iter_mut().zip(vc) {
                *o += a * v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .flatten()
            .zip(other.components.iter().flatten())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}
