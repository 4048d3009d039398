//! The memory kernel `G(t)` of the effective Hele-Shaw law.
//!
//! `G` comes from a transient Stokes problem posed on the rescaled gap
//! `(-1, 1)` with unit initial velocity along a tangential direction. With
//! constant coefficients the solution does not depend on the in-plane
//! variable, the normal velocity vanishes, the pressure is constant across
//! the gap, and each tangential component obeys the heat equation
//!
//! ```text
//! dw/dt = alpha d2w/dzeta2,   w(t, +-1) = 0,   w(0, .) = 1.
//! ```
//!
//! Hence `G(t) = g(t) I` with `g(t) = 1/2 * integral of w(t, .)`, which has
//! the exponential-sum form `g(t) = sum_{n odd} 8/(n^2 pi^2) exp(-alpha n^2 pi^2 t / 4)`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Bc, Grid, ScalarField};

/// Default number of retained odd modes.
pub const DEFAULT_MODES: usize = 64;

/// One exponential `weight * exp(-rate * t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMode {
    pub weight: f64,
    pub rate: f64,
}

impl KernelMode {
    pub fn new(weight: f64, rate: f64) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: format!("must be finite and positive, got {weight}"),
            });
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rate",
                reason: format!("must be finite and positive, got {rate}"),
            });
        }
        Ok(Self { weight, rate })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.weight * (-self.rate * t).exp()
    }
}

/// Matrix kernel stored as exponential sums. Only the upper triangle is kept,
/// so every evaluation is exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryKernel {
    dim: usize,
    /// Packed upper triangle, row major: (0,0), (0,1), ..., (1,1), ...
    upper: Vec<Vec<KernelMode>>,
    /// Bound on `|sum of diagonal weights - 1|` from the dropped modes.
    pub truncation_error_bound: f64,
}

fn packed(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

impl MemoryKernel {
    pub fn from_upper(dim: usize, upper: Vec<Vec<KernelMode>>, truncation_error_bound: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("kernel dimension must be 1 or 2, got {dim}"),
            });
        }
        if upper.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} upper-triangle entries, got {}",
                dim * (dim + 1) / 2,
                upper.len()
            )));
        }
        Ok(Self {
            dim,
            upper,
            truncation_error_bound,
        })
    }

    /// `G(t) = g(t) I` with `g` given by `modes`.
    pub fn isotropic(dim: usize, modes: Vec<KernelMode>, truncation_error_bound: f64) -> Result<Self> {
        let mut upper = vec![Vec::new(); dim * (dim + 1) / 2];
        for i in 0..dim {
            upper[packed(dim, i, i)] = modes.clone();
        }
        Self::from_upper(dim, upper, truncation_error_bound)
    }

    /// A single fast mode `weight * exp(-rate t)`; with `weight = rate` large
    /// it approximates a Dirac mass, i.e. the memoryless Darcy law.
    pub fn single_mode(dim: usize, weight: f64, rate: f64) -> Result<Self> {
        Self::isotropic(dim, vec![KernelMode::new(weight, rate)?], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self, i: usize, j: usize) -> &[KernelMode] {
        &self.upper[packed(self.dim, i, j)]
    }

    pub fn is_isotropic(&self) -> bool {
        let d0 = self.modes(0, 0);
        (0..self.dim).all(|i| self.modes(i, i) == d0)
            && (0..self.dim).all(|i| (i + 1..self.dim).all(|j| self.modes(i, j).is_empty()))
    }

    /// Modes of the scalar kernel `g` when `G = g I`.
    pub fn scalar_modes(&self) -> Result<&[KernelMode]> {
        if !self.is_isotropic() {
            return Err(Error::AnisotropicKernel);
        }
        Ok(self.modes(0, 0))
    }

    /// Slowest decay rate over all entries.
    pub fn min_rate(&self) -> f64 {
        self.upper
            .iter()
            .flatten()
            .map(|m| m.rate)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.upper.iter().flatten().map(|m| m.rate).fold(0.0, f64::max)
    }

    pub fn weight_sum(&self, i: usize, j: usize) -> f64 {
        self.modes(i, j).iter().map(|m| m.weight).sum()
    }

    /// `G(t)`.
    pub fn evaluate(&self, t: f64) -> Result<KernelMatrix> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: format!("kernel is defined for t >= 0, got {t}"),
            });
        }
        let mut data = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in i..self.dim {
                let v: f64 = self.modes(i, j).iter().map(|m| m.eval(t)).sum();
                data[i * self.dim + j] = v;
                data[j * self.dim + i] = v;
            }
        }
        Ok(KernelMatrix {
            dim: self.dim,
            data,
        })
    }

    /// Entry `(0, 0)` of `G(t)`.
    pub fn g(&self, t: f64) -> f64 {
        self.modes(0, 0).iter().map(|m| m.eval(t)).sum()
    }
}

/// A small dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl KernelMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Largest `|G_ij - G_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self.dim {
            1 => self.data[0],
            _ => {
                let (a, b, d) = (self.get(0, 0), self.get(0, 1), self.get(1, 1));
                let mid = 0.5 * (a + d);
                let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mid - rad
            }
        }
    }
}

/// The constant-coefficient reduction of the cell problem to a 1D heat
/// equation on `(-1, 1)` with Dirichlet ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellReduction {
    pub alpha: f64,
}

pub fn reduce_cell_problem(alpha: f64) -> Result<CellReduction> {
    check_alpha(alpha)?;
    Ok(CellReduction { alpha })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("viscosity must be positive, got {alpha}"),
        });
    }
    Ok(())
}

impl CellReduction {
    /// Incompressibility with no-slip walls leaves no normal velocity.
    pub fn normal_velocity(&self, _t: f64, _zeta: f64) -> f64 {
        0.0
    }

    /// Tangential components decouple, so `G_ij = 0` for `i != j`.
    pub fn cross_entry(&self, _t: f64) -> f64 {
        0.0
    }

    /// `alpha (n pi / 2)^2`, the `n`-th Dirichlet eigenvalue on `(-1, 1)`.
    pub fn eigenvalue(&self, n: usize) -> f64 {
        let k = n as f64 * PI / 2.0;
        self.alpha * k * k
    }

    pub fn eigenfunction(&self, n: usize, zeta: f64) -> f64 {
        (n as f64 * PI * (zeta + 1.0) / 2.0).sin()
    }

    /// Coefficient of the unit initial profile on eigenfunction `n`.
    pub fn initial_coefficient(&self, n: usize) -> f64 {
        if n % 2 == 1 {
            4.0 / (n as f64 * PI)
        } else {
            0.0
        }
    }

    /// `w(t, zeta)` from the first `n_modes` odd eigenfunctions.
    pub fn profile(&self, t: f64, zeta: f64, n_modes: usize) -> f64 {
        (0..n_modes)
            .map(|k| {
                let n = 2 * k + 1;
                self.initial_coefficient(n) * (-self.eigenvalue(n) * t).exp() * self.eigenfunction(n, zeta)
            })
            .sum()
    }
}

impl fmt::Display for CellReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "heat equation dw/dt = {} d2w/dzeta2 on (-1,1), w(+-1)=0, w(0)=1; \
             normal velocity 0, pressure constant across the gap, G = g I",
            self.alpha
        )
    }
}

/// Eigenseries kernel with `n_modes` odd modes.
pub fn kernel_series(alpha: f64, n_modes: usize, dim: usize) -> Result<MemoryKernel> {
    check_alpha(alpha)?;
    if n_modes == 0 {
        return Err(Error::InvalidParameter {
            name: "n_modes",
            reason: "at least one mode is required".into(),
        });
    }
    let modes = (0..n_modes)
        .map(|k| {
            let n = (2 * k + 1) as f64;
            KernelMode {
                weight: 8.0 / (n * n * PI * PI),
                rate: alpha * n * n * PI * PI / 4.0,
            }
        })
        .collect();
    // sum_{k >= N} 1/(2k+1)^2 <= integral from N - 1/2 (convexity), = 1/(4N).
    let bound = 2.0 / (PI * PI * n_modes as f64);
    MemoryKernel::isotropic(dim, modes, bound)
}

/// Snapshot of the reduced cell problem.
#[derive(Debug, Clone)]
pub struct CellProblemSolution {
    pub alpha: f64,
    pub t: f64,
    /// Tangential profile on `[-1, 1]`, Dirichlet at both ends.
    pub w: ScalarField,
}

#[derive(Debug, Clone)]
pub struct KernelFd {
    pub times: Vec<f64>,
    pub g: Vec<f64>,
    /// `||w(t)||_2` on `(-1, 1)`.
    pub l2: Vec<f64>,
    pub last: CellProblemSolution,
}

/// Solves `A x = d` for tridiagonal `A` with constant bands.
fn thomas_constant(lower: f64, diag: f64, upper: f64, d: &mut [f64], scratch: &mut [f64]) {
    let n = d.len();
    scratch[0] = upper / diag;
    d[0] /= diag;
    for i in 1..n {
        let m = diag - lower * scratch[i - 1];
        scratch[i] = upper / m;
        d[i] = (d[i] - lower * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i] * d[i + 1];
    }
}

/// Finite-difference kernel: Crank-Nicolson on the reduced heat problem,
/// started with two backward-Euler half steps to damp the corner layer
/// between the unit initial data and the walls.
pub fn kernel_fd(alpha: f64, grid: &Grid, dt: f64, t_end: f64) -> Result<KernelFd> {
    check_alpha(alpha)?;
    if grid.dim() != 1 || (grid.x.min + 1.0).abs() > 1e-12 || (grid.x.max - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "cell problem grid must be the interval [-1, 1]".into(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    if !(t_end >= dt) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: format!("must be at least dt, got {t_end}"),
        });
    }
    let n = grid.x.cells;
    let h = grid.hx();
    let m = n - 1;
    let r = alpha / (h * h);
    let steps = (t_end / dt).round() as usize;

    let mut w = vec![1.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = vec![0.0; m];

    let mean_and_norm = |w: &[f64]| {
        // Boundary nodes are zero, interior trapezoid weights are h.
        let s: f64 = w.iter().sum::<f64>() * h;
        let q: f64 = w.iter().map(|v| v * v).sum::<f64>() * h;
        (0.5 * s, q.sqrt())
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut g = Vec::with_capacity(steps + 1);
    let mut l2 = Vec::with_capacity(steps + 1);
    let (g0, n0) = mean_and_norm(&w);
    times.push(0.0);
    g.push(g0);
    l2.push(n0);

    // theta-scheme step: (I - theta k D2) w+ = (I + (1 - theta) k D2) w.
    let mut step = |w: &mut Vec<f64>, k: f64, theta: f64| {
        let a = (1.0 - theta) * k * r;
        for i in 0..m {
            let left = if i > 0 { w[i - 1] } else { 0.0 };
            let right = if i + 1 < m { w[i + 1] } else { 0.0 };
            rhs[i] = w[i] + a * (left - 2.0 * w[i] + right);
        }
        let b = theta * k * r;
        thomas_constant(-b, 1.0 + 2.0 * b, -b, &mut rhs, &mut scratch);
        w.copy_from_slice(&rhs);
    };

    for s in 1..=steps {
        if s == 1 {
            step(&mut w, 0.5 * dt, 1.0);
            step(&mut w, 0.5 * dt, 1.0);
        } else {
            step(&mut w, dt, 0.5);
        }
        let (gs, ns) = mean_and_norm(&w);
        times.push(s as f64 * dt);
        g.push(gs);
        l2.push(ns);
    }

    let mut values = vec![0.0; n + 1];
    values[1..n].copy_from_slice(&w);
    let last = CellProblemSolution {
        alpha,
        t: steps as f64 * dt,
        w: ScalarField {
            grid: *grid,
            values,
            bc: [Bc::Dirichlet0, Bc::Dirichlet0],
        },
    };
    Ok(KernelFd { times, g, l2, last })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: direct summation of the odd-mode series.
    fn series_oracle(alpha: f64, t: f64, modes: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..modes {
            let n = (2 * k + 1) as f64;
            s += 8.0 / (n * n * PI * PI) * (-alpha * n * n * PI * PI * t / 4.0).exp();
        }
        s
    }

    #[test]
    fn series_sums_to_one_at_zero() {
        let k = kernel_series(1.0, DEFAULT_MODES, 2).unwrap();
        let g0 = k.g(0.0);
        assert!((g0 - 1.0).abs() <= k.truncation_error_bound);
        let big = kernel_series(1.0, 200_000, 1).unwrap();
        assert!((big.g(0.0) - 1.0).abs() < 2e-6);
    }

    #[test]
    fn value_at_one_matches_oracle() {
        let k = kernel_series(1.0, DEFAULT_MODES, 2).unwrap();
        let oracle = series_oracle(1.0, 1.0, 60);
        assert!((k.g(1.0) - oracle).abs() < 1e-15);
        // 8/pi^2 * exp(-pi^2/4) = 0.0687403...
        assert!((k.g(1.0) - 0.068740).abs() < 5e-7, "g(1) = {}", k.g(1.0));
        let second = 8.0 / (9.0 * PI * PI) * (-9.0 * PI * PI / 4.0).exp();
        assert!(second < 1e-10);
    }

    #[test]
    fn slowest_rate_is_leading_eigenvalue() {
        let k = kernel_series(1.0, 10, 2).unwrap();
        assert!((k.min_rate() - PI * PI / 4.0).abs() < 1e-14);
        assert!((k.min_rate() - 2.4674).abs() < 1e-4);
    }

    #[test]
    fn reduction_eigenvalues() {
        let red = reduce_cell_problem(1.0).unwrap();
        for n in 1..6 {
            let expected = (n as f64 * PI / 2.0).powi(2);
            assert!((red.eigenvalue(n) - expected).abs() < 1e-12);
        }
        assert_eq!(red.cross_entry(0.3), 0.0);
        assert_eq!(red.normal_velocity(0.3, 0.2), 0.0);
        assert!(reduce_cell_problem(0.0).is_err());
        assert!(reduce_cell_problem(-1.0).is_err());
    }

    #[test]
    fn reduction_profile_integrates_to_kernel() {
        let red = reduce_cell_problem(0.7).unwrap();
        let k = kernel_series(0.7, 400, 1).unwrap();
        let t = 0.2;
        let n = 4000;
        let h = 2.0 / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * h * red.profile(t, -1.0 + i as f64 * h, 400);
        }
        assert!((0.5 * s - k.g(t)).abs() < 1e-6);
    }

    #[test]
    fn off_diagonal_entries_vanish() {
        let k = kernel_series(2.0, 16, 2).unwrap();
        let g = k.evaluate(0.3).unwrap();
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 0), 0.0);
        assert_eq!(g.asymmetry(), 0.0);
    }

    #[test]
    fn evaluate_at_zero_and_large_times() {
        let k = kernel_series(1.0, DEFAULT_MODES, 2).unwrap();
        let g0 = k.evaluate(0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((g0.get(i, j) - id).abs() <= k.truncation_error_bound);
            }
        }
        // exp(-20) * 8/pi^2 is still ~1.7e-9; exp(-30) clears 1e-12.
        let mid = k.evaluate(20.0 / k.min_rate()).unwrap();
        assert!((mid.get(0, 0) - 8.0 / (PI * PI) * (-20.0_f64).exp()).abs() < 1e-15);
        let late = k.evaluate(30.0 / k.min_rate()).unwrap();
        assert!(late.data.iter().all(|v| v.abs() <= 1e-12));
        assert!(k.evaluate(-1e-3).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(kernel_series(1.0, 0, 2).is_err());
        assert!(kernel_series(f64::NAN, 3, 2).is_err());
        assert!(kernel_series(1.0, 3, 3).is_err());
        assert!(KernelMode::new(-1.0, 1.0).is_err());
        assert!(KernelMode::new(1.0, 0.0).is_err());
        let bad = Grid::interval(0.0, 1.0, 10).unwrap();
        assert!(kernel_fd(1.0, &bad, 1e-3, 0.1).is_err());
    }

    #[test]
    fn truncation_bound_covers_tail() {
        for n in [1, 5, 64, 450] {
            let k = kernel_series(1.0, n, 1).unwrap();
            let sum = k.weight_sum(0, 0);
            assert!((sum - 1.0).abs() <= k.truncation_error_bound, "n = {n}");
        }
    }

    #[test]
    fn fd_kernel_tracks_series_early() {
        let grid = Grid::interval(-1.0, 1.0, 200).unwrap();
        let fd = kernel_fd(1.0, &grid, 1e-4, 0.05).unwrap();
        let k = kernel_series(1.0, 2000, 1).unwrap();
        let idx = 100; // t = 0.01
        assert!((fd.times[idx] - 0.01).abs() < 1e-12);
        assert!((fd.g[idx] - k.g(0.01)).abs() < 1e-3);
        for w in fd.g.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
