//! Discrete norms, inequality spot checks, the Gronwall envelope and run
//! ledgers.

mod ledger;

pub use ledger::{config_hash, RunLedger};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_laplacian, gradient_into, Bc, Grid, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub l4: f64,
    pub linf: f64,
    pub h1_semi: f64,
}

/// Trapezoid norms of a node field plus the edge-based gradient seminorm.
pub fn norms(f: &ScalarField) -> Norms {
    let g = f.grid;
    let w = g.node_weights();
    let mut s2 = 0.0;
    let mut s4 = 0.0;
    for (v, w) in f.values.iter().zip(&w) {
        let v2 = v * v;
        s2 += w * v2;
        s4 += w * v2 * v2;
    }
    Norms {
        l2: s2.sqrt(),
        l4: s4.sqrt().sqrt(),
        linf: f.norm_inf(),
        h1_semi: grad_norm(f),
    }
}

pub fn grad_norm(f: &ScalarField) -> f64 {
    let mut grad = VectorField::zeros(f.grid);
    gradient_into(&f.grid, &f.values, &mut grad.components);
    grad.norm_l2()
}

/// `||laplacian f||_2`, taking the Laplacian with the field's own tags.
fn laplacian_norm(f: &ScalarField) -> Result<f64> {
    let mut lap = vec![0.0; f.values.len()];
    apply_laplacian(&f.grid, f.bc, &f.values, &mut lap)?;
    let l = ScalarField {
        grid: f.grid,
        values: lap,
        bc: f.bc,
    };
    Ok(l.dot(&l).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `||f||_2 <= 2 ||grad f||_2` on `(0, 2) x (-1, 1)`, `f = 0` at `zeta = +-1`.
    PoincareStrip,
    /// `||f||_inf <= C ||f||_2^{1/2} ||f||_{H^2}^{1/2}` on the unit square.
    Agmon,
    /// `||f||_4 <= C (||f||_2^{1/2} ||grad f||_2^{1/2} + ||f||_2)` on the unit square.
    GnL4,
}

impl Inequality {
    pub const ALL: [Inequality; 3] = [Inequality::PoincareStrip, Inequality::Agmon, Inequality::GnL4];

    pub fn name(&self) -> &'static str {
        match self {
            Inequality::PoincareStrip => "poincare_strip",
            Inequality::Agmon => "agmon",
            Inequality::GnL4 => "gn_l4",
        }
    }

    fn grid(&self, cells: usize) -> Result<Grid> {
        match self {
            Inequality::PoincareStrip => Grid::rectangle((0.0, 2.0), (-1.0, 1.0), (cells, cells)),
            _ => Grid::rectangle((0.0, 1.0), (0.0, 1.0), (cells, cells)),
        }
    }

    fn bc(&self) -> [Bc; 2] {
        match self {
            Inequality::PoincareStrip => [Bc::Neumann0, Bc::Dirichlet0],
            _ => [Bc::Neumann0; 2],
        }
    }

    /// Ratio of the left side to the right side without the constant.
    pub fn ratio(&self, f: &ScalarField) -> Result<f64> {
        let n = norms(f);
        Ok(match self {
            Inequality::PoincareStrip => n.l2 / n.h1_semi,
            Inequality::Agmon => {
                let lap = laplacian_norm(f)?;
                let h2 = (n.l2 * n.l2 + n.h1_semi * n.h1_semi + lap * lap).sqrt();
                n.linf / (n.l2 * h2).sqrt()
            }
            Inequality::GnL4 => n.l4 / ((n.l2 * n.h1_semi).sqrt() + n.l2),
        })
    }

    /// A random smooth field with the inequality's boundary behaviour.
    pub fn sample(&self, grid: Grid, coeffs: &[[f64; 4]; 4], offset: f64) -> ScalarField {
        let (x0, x1) = (grid.x.min, grid.x.max);
        let (y0, y1) = grid.y.map_or((0.0, 1.0), |a| (a.min, a.max));
        let (lx, ly) = (x1 - x0, y1 - y0);
        match self {
            Inequality::PoincareStrip => ScalarField::from_fn_mixed(grid, self.bc(), |x, y| {
                let mut s = 0.0;
                for (m, row) in coeffs.iter().enumerate() {
                    for (n, c) in row.iter().enumerate() {
                        s += c * (m as f64 * PI * (x - x0) / lx).cos()
                            * ((n + 1) as f64 * PI * (y - y0) / ly).sin();
                    }
                }
                s
            }),
            _ => ScalarField::from_fn(grid, Bc::Neumann0, |x, y| {
                let mut s = offset;
                for (m, row) in coeffs.iter().enumerate() {
                    for (n, c) in row.iter().enumerate() {
                        s += c * (m as f64 * PI * (x - x0) / lx).cos() * (n as f64 * PI * (y - y0) / ly).cos();
                    }
                }
                s
            }),
        }
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Inequality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Inequality::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "inequality",
                reason: format!("unknown inequality {s:?}"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub samples: usize,
    pub cells: usize,
    pub max_ratio: f64,
    /// Same samples on the once-refined grid.
    pub max_ratio_refined: f64,
    /// Relative change under refinement.
    pub refinement_change: f64,
    pub grid_stable: bool,
    /// The constant the proof provides, when there is one.
    pub proven_bound: Option<f64>,
    /// Ratio at the extremal field, when one is known.
    pub extremal_ratio: Option<f64>,
}

pub const GRID_STABILITY_TOL: f64 = 0.10;

/// Empirical max ratio over `samples` random smooth fields, on `cells` and on
/// `2 * cells`.
pub fn inequality_check(which: Inequality, samples: usize, cells: usize, seed: u64) -> Result<InequalityReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "need at least one sample".into(),
        });
    }
    let coarse = which.grid(cells)?;
    let fine = which.grid(2 * cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_c: f64 = 0.0;
    let mut max_f: f64 = 0.0;
    for _ in 0..samples {
        let mut coeffs = [[0.0; 4]; 4];
        for (m, row) in coeffs.iter_mut().enumerate() {
            for (n, c) in row.iter_mut().enumerate() {
                *c = rng.random_range(-1.0..1.0) / (1.0 + (m + n) as f64).powi(2);
            }
        }
        let offset = rng.random_range(-1.0..1.0);
        max_c = max_c.max(which.ratio(&which.sample(coarse, &coeffs, offset))?);
        max_f = max_f.max(which.ratio(&which.sample(fine, &coeffs, offset))?);
    }
    let change = (max_f - max_c).abs() / max_c;
    let (proven_bound, extremal_ratio) = match which {
        Inequality::PoincareStrip => {
            let eig = ScalarField::from_fn_mixed(coarse, which.bc(), |_, y| (PI * (y + 1.0) / 2.0).sin());
            (Some(2.0), Some(which.ratio(&eig)?))
        }
        _ => (None, None),
    };
    Ok(InequalityReport {
        name: which.name().into(),
        samples,
        cells,
        max_ratio: max_c,
        max_ratio_refined: max_f,
        refinement_change: change,
        grid_stable: change <= GRID_STABILITY_TOL,
        proven_bound,
        extremal_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    /// Whether the discrete hypothesis holds at every sample.
    pub hypothesis_holds: bool,
    /// Largest `u_n - rhs_n` of the hypothesis (positive means violated).
    pub hypothesis_excess: f64,
    pub bound_holds: bool,
    /// `max_n u_n / envelope_n`.
    pub max_ratio: f64,
    pub envelope: Vec<f64>,
}

/// Discrete Gronwall envelope with left-rectangle quadrature in both
/// integrals.
///
/// Hypothesis: `u_n <= c1 + c2 sum_{k<n} dt_k (v_k u_k + sum_{j<k} dt_j h(k, j) u_j)`.
/// Envelope: `c1 exp(c2 sum_{k<n} dt_k (v_k + sum_{j<k} dt_j h(k, j)))`.
/// For this quadrature the hypothesis implies the envelope exactly, so a
/// failing bound under a holding hypothesis signals a bug, not round-off.
pub fn gronwall_envelope(
    times: &[f64],
    u: &[f64],
    v: &[f64],
    h: impl Fn(usize, usize) -> f64,
    c1: f64,
    c2: f64,
) -> Result<GronwallReport> {
    let n = times.len();
    if u.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "times {n}, u {}, v {}",
            u.len(),
            v.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "times",
            reason: "must be strictly increasing".into(),
        });
    }
    let mut nonneg = c1 >= 0.0 && c2 >= 0.0;
    nonneg &= u.iter().chain(v).all(|x| *x >= 0.0);

    let mut rhs = c1;
    let mut exponent = 0.0;
    let mut excess = f64::NEG_INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut envelope = Vec::with_capacity(n);
    for k in 0..n {
        let env = c1 * (c2 * exponent).exp();
        envelope.push(env);
        excess = excess.max(u[k] - rhs);
        max_ratio = max_ratio.max(if env > 0.0 { u[k] / env } else if u[k] > 0.0 { f64::INFINITY } else { 0.0 });
        if k + 1 == n {
            break;
        }
        let dt = times[k + 1] - times[k];
        let mut mem_u = 0.0;
        let mut mem = 0.0;
        for j in 0..k {
            let hkj = h(k, j);
            nonneg &= hkj >= 0.0;
            let dj = times[j + 1] - times[j];
            mem_u += dj * hkj * u[j];
            mem += dj * hkj;
        }
        rhs += c2 * dt * (v[k] * u[k] + mem_u);
        exponent += dt * (v[k] + mem);
    }
    // A relative slack absorbs round-off in the running sums.
    let slack = 1e-12;
    let hypothesis_holds = nonneg && excess <= slack * rhs.abs().max(1.0);
    Ok(GronwallReport {
        hypothesis_holds,
        hypothesis_excess: excess,
        bound_holds: max_ratio <= 1.0 + slack,
        max_ratio,
        envelope,
    })
}
