//! Conjugate gradients, the Neumann Poisson problem and the Leray projection.

use super::{apply_laplacian, divergence_into, gradient_into, Bc, Grid, ScalarField, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Bound on the scaled row sums `max_i sum_j |A_ij| / scale_i`. When
    /// positive the test becomes the backward-error form
    /// `|r| <= tol (|b| + op_norm |x|)`, which stays attainable for stiff
    /// operators whose rounding floor lies above `tol |b|`.
    pub op_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

fn scaled_inf(r: &[f64], scale: &[f64]) -> f64 {
    r.iter()
        .zip(scale)
        .fold(0.0_f64, |m, (r, s)| m.max((r / s).abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Jacobi-preconditioned CG for a symmetric positive (semi)definite `apply`.
///
/// Convergence is declared on the true residual: `max_i |r_i / scale_i|`
/// relative to the same norm of `b` (see [`CgOptions::op_norm`]). With `scale` set to the quadrature
/// weights this is the sup-norm of the unweighted PDE residual.
pub(crate) fn pcg(
    apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    diag: &[f64],
    scale: &[f64],
    opts: &CgOptions,
) -> Result<CgReport> {
    pcg_with(
        apply,
        |r, z| {
            for ((z, r), d) in z.iter_mut().zip(r).zip(diag) {
                *z = r / d;
            }
        },
        b,
        x,
        scale,
        opts,
    )
}

/// [`pcg`] with an arbitrary symmetric positive definite preconditioner
/// `precond(r, z)` writing `z = M^{-1} r`.
pub(crate) fn pcg_with(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    scale: &[f64],
    opts: &CgOptions,
) -> Result<CgReport> {
    let n = b.len();
    let b_norm = scaled_inf(b, scale);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let x_inf = |x: &[f64]| x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut target;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    let true_residual = |apply: &mut dyn FnMut(&[f64], &mut [f64]), x: &[f64], r: &mut [f64]| {
        apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    };

    // Outer loop restarts from the true residual whenever the recursive one
    // has converged but the true one has not.
    loop {
        true_residual(&mut apply, x, &mut r);
        let res = scaled_inf(&r, scale);
        target = opts.tol * (b_norm + opts.op_norm * x_inf(x));
        if res <= target {
            return Ok(CgReport {
                iterations,
                residual: res / b_norm,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res / b_norm,
            });
        }
        precond(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let restart_at = iterations;
        loop {
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if scaled_inf(&r, scale) <= 0.5 * target || iterations >= opts.max_iter {
                break;
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations == restart_at {
            // Breakdown without progress.
            true_residual(&mut apply, x, &mut r);
            let res = scaled_inf(&r, scale) / b_norm;
            if res * b_norm <= opts.tol * (b_norm + opts.op_norm * x_inf(x)) {
                return Ok(CgReport {
                    iterations,
                    residual: res,
                });
            }
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
            });
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoissonOptions {
    /// Relative sup-norm residual target for `laplacian(q) = rhs`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible weighted mean of the right-hand side relative to
    /// its sup norm; `None` removes any mean silently (it is still reported).
    pub compat_tol: Option<f64>,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            compat_tol: Some(1e-10),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// Mean-zero solution.
    pub q: ScalarField,
    /// Weighted mean subtracted from the right-hand side before solving.
    pub removed_mean: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `laplacian(q) = rhs` under homogeneous Neumann conditions with
/// `integral(q) = 0`.
pub fn solve_neumann_poisson(rhs: &ScalarField) -> Result<PoissonSolution> {
    solve_neumann_poisson_with(rhs, &PoissonOptions::default(), None)
}

pub fn solve_neumann_poisson_with(
    rhs: &ScalarField,
    opts: &PoissonOptions,
    guess: Option<&[f64]>,
) -> Result<PoissonSolution> {
    if !rhs.is_finite() {
        return Err(Error::NonFinite);
    }
    let g = rhs.grid;
    let bc = [Bc::Neumann0, Bc::Neumann0];
    let w = g.node_weights();
    let measure: f64 = w.iter().sum();
    let mean = rhs.integral() / measure;
    let scale_rhs = rhs.norm_inf();
    if let Some(ct) = opts.compat_tol {
        if mean.abs() > ct * scale_rhs.max(f64::MIN_POSITIVE) {
            return Err(Error::Incompatible {
                mean,
                tol: ct * scale_rhs,
            });
        }
    }
    // Symmetric form: -W L q = -W (rhs - mean).
    let b: Vec<f64> = rhs
        .values
        .iter()
        .zip(&w)
        .map(|(r, w)| -w * (r - mean))
        .collect();
    let stencil_diag = 2.0 / (g.hx() * g.hx())
        + if g.dim() == 2 {
            2.0 / (g.hy() * g.hy())
        } else {
            0.0
        };
    let diag: Vec<f64> = w.iter().map(|wi| wi * stencil_diag).collect();
    let mut x = match guess {
        Some(q0) if q0.len() == g.len() => q0.to_vec(),
        _ => vec![0.0; g.len()],
    };
    let mut tmp = vec![0.0; g.len()];
    let report = pcg(
        |v, out| {
            apply_laplacian(&g, bc, v, &mut tmp).expect("Neumann tags are set");
            for ((o, t), wi) in out.iter_mut().zip(&tmp).zip(&w) {
                *o = -wi * t;
            }
        },
        &b,
        &mut x,
        &diag,
        &w,
        &CgOptions {
            op_norm: 0.0,
            tol: opts.tol,
            max_iter: opts.max_iter,
        },
    )?;
    let mut q = ScalarField {
        grid: g,
        values: x,
        bc,
    };
    let qmean = q.integral() / measure;
    q.values.iter_mut().for_each(|v| *v -= qmean);
    Ok(PoissonSolution {
        q,
        removed_mean: mean,
        iterations: report.iterations,
        residual: report.residual,
    })
}

/// Result of a Leray projection `b = u + grad q`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub u: VectorField,
    pub q: ScalarField,
    pub iterations: usize,
}

/// Splits `b` into a discretely divergence-free part with zero normal flux
/// and a gradient.
pub fn leray_project(b: &VectorField) -> Result<Projection> {
    leray_project_with(b, &PoissonOptions::default(), None)
}

pub fn leray_project_with(
    b: &VectorField,
    opts: &PoissonOptions,
    guess: Option<&[f64]>,
) -> Result<Projection> {
    if !b.is_finite() {
        return Err(Error::NonFinite);
    }
    let g: Grid = b.grid;
    let mut div = ScalarField::zeros(g, Bc::Neumann0);
    // The projected field carries zero normal flux, whatever `b` declares.
    let bc = vec![Bc::Dirichlet0; g.dim()];
    divergence_into(&g, &b.components, &bc, &mut div.values)?;
    // The divergence has zero weighted mean by construction; only rounding
    // is removed here.
    let opts = PoissonOptions {
        compat_tol: None,
        ..*opts
    };
    let sol = solve_neumann_poisson_with(&div, &opts, guess)?;
    let mut grad = VectorField::zeros(g);
    gradient_into(&g, &sol.q.values, &mut grad.components);
    let mut u = b.axpy(-1.0, &grad);
    u.bc = bc;
    Ok(Projection {
        u,
        q: sol.q,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{divergence, gradient, laplacian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn square(n: usize) -> Grid {
        Grid::rectangle((0.0, 1.0), (0.0, 1.0), (n, n)).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let rhs = ScalarField::zeros(square(8), Bc::Neumann0);
        let s = solve_neumann_poisson(&rhs).unwrap();
        assert_eq!(s.q.norm_inf(), 0.0);
    }

    #[test]
    fn manufactured_cosine_is_recovered() {
        let grid = Grid::rectangle((0.0, 2.0), (0.0, 1.0), (24, 12)).unwrap();
        let exact = ScalarField::from_fn(grid, Bc::Neumann0, |x, y| {
            (PI * x / 2.0).cos() + 0.3 * (2.0 * PI * y).cos()
        });
        let rhs = laplacian(&exact).unwrap();
        let s = solve_neumann_poisson(&rhs).unwrap();
        let mean = exact.integral() / grid.measure();
        for (q, e) in s.q.values.iter().zip(&exact.values) {
            assert!((q - (e - mean)).abs() < 1e-8);
        }
        assert!(s.q.integral().abs() < 1e-13);
    }

    #[test]
    fn random_mean_zero_rhs_meets_residual() {
        let grid = square(20);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rhs = ScalarField::from_values(grid, Bc::Neumann0, vals).unwrap();
        let m = rhs.integral() / grid.measure();
        rhs.values.iter_mut().for_each(|v| *v -= m);
        let s = solve_neumann_poisson(&rhs).unwrap();
        let lq = laplacian(&s.q).unwrap();
        let res = lq.axpy(-1.0, &rhs).norm_inf();
        assert!(res <= 1e-10 * rhs.norm_inf(), "residual {res}");
    }

    #[test]
    fn incompatible_rhs_is_rejected_or_projected() {
        let grid = square(8);
        let rhs = ScalarField::constant(grid, Bc::Neumann0, 1.0);
        assert!(matches!(
            solve_neumann_poisson(&rhs),
            Err(Error::Incompatible { .. })
        ));
        let opts = PoissonOptions {
            compat_tol: None,
            ..Default::default()
        };
        let s = solve_neumann_poisson_with(&rhs, &opts, None).unwrap();
        assert!((s.removed_mean - 1.0).abs() < 1e-14);
        assert!(s.q.norm_inf() < 1e-12);
    }

    #[test]
    fn no_convergence_is_reported() {
        let grid = square(16);
        let exact = ScalarField::from_fn(grid, Bc::Neumann0, |x, y| (x * y).powi(3) + (5.0 * x).sin());
        let rhs = laplacian(&exact).unwrap();
        let opts = PoissonOptions {
            max_iter: 2,
            ..Default::default()
        };
        assert!(matches!(
            solve_neumann_poisson_with(&rhs, &opts, None),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn gradient_is_annihilated() {
        let grid = square(16);
        let psi = ScalarField::from_fn(grid, Bc::Neumann0, |x, y| x * x * y + (3.0 * y).sin());
        let b = gradient(&psi).unwrap();
        let p = leray_project(&b).unwrap();
        assert!(p.u.norm_inf() < 1e-9 * b.norm_inf());
    }

    #[test]
    fn uniform_flow_projects_to_divergence_free() {
        let grid = square(16);
        let b = VectorField::from_fn(grid, |_, _| [1.0, 0.0]);
        let p = leray_project(&b).unwrap();
        let d = divergence(&p.u).unwrap();
        assert!(d.norm_inf() <= 1e-9, "div {}", d.norm_inf());
    }

    #[test]
    fn projection_is_idempotent() {
        let grid = square(14);
        let b = VectorField::from_fn(grid, |x, y| [(3.0 * y).sin() + x, x * y]);
        let p1 = leray_project(&b).unwrap();
        let p2 = leray_project(&p1.u).unwrap();
        assert!(p1.u.max_abs_diff(&p2.u) <= 1e-10 * p1.u.norm_inf().max(1.0));
    }
}
