//! Convective Cahn-Hilliard dynamics and the double-well machinery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    apply_laplacian, divergence_into, gradient_into, pcg, Bc, CgOptions, Grid, ScalarField,
    VectorField,
};

/// Quartic double-well `F(r) = sum_k c_k r^k` with `f = F'`.
///
/// `F(0)` is allowed to be nonzero so that the Landau potential keeps its
/// usual normalisation `F(+-1) = 0`; only `f` enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    /// Coefficients of `F`, constant term first.
    pub coeffs: [f64; 5],
}

impl Potential {
    /// `F(r) = (r^2 - 1)^2 / 4`.
    pub fn landau() -> Self {
        Self {
            coeffs: [0.25, 0.0, -0.5, 0.0, 0.25],
        }
    }

    pub fn quartic(coeffs: [f64; 5]) -> Result<Self> {
        let p = Self { coeffs };
        p.validate()?;
        Ok(p)
    }

    #[inline]
    pub fn big_f(&self, r: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + r * (c[1] + r * (c[2] + r * (c[3] + r * c[4])))
    }

    #[inline]
    pub fn f(&self, r: f64) -> f64 {
        let c = &self.coeffs;
        c[1] + r * (2.0 * c[2] + r * (3.0 * c[3] + r * 4.0 * c[4]))
    }

    #[inline]
    pub fn f_prime(&self, r: f64) -> f64 {
        let c = &self.coeffs;
        2.0 * c[2] + r * (6.0 * c[3] + r * 12.0 * c[4])
    }

    #[inline]
    pub fn f_second(&self, r: f64) -> f64 {
        let c = &self.coeffs;
        6.0 * c[3] + 24.0 * c[4] * r
    }

    /// Smallest `c_f` with `|f''(r)| <= c_f (1 + |r|)` for all `r`.
    pub fn growth_constant(&self) -> f64 {
        (6.0 * self.coeffs[3].abs()).max(24.0 * self.coeffs[4].abs())
    }

    /// `max |f'(r)|` over `|r| <= bound`.
    pub fn max_abs_f_prime(&self, bound: f64) -> f64 {
        let mut m = self.f_prime(bound).abs().max(self.f_prime(-bound).abs());
        let c4 = self.coeffs[4];
        if c4 != 0.0 {
            let vertex = -6.0 * self.coeffs[3] / (24.0 * c4);
            if vertex.abs() <= bound {
                m = m.max(self.f_prime(vertex).abs());
            }
        }
        m
    }

    /// Spot checks of the growth conditions on `[-10, 10]`.
    pub fn validate(&self) -> Result<()> {
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(self.coeffs[4] > 0.0) {
            return Err(Error::InvalidParameter {
                name: "potential",
                reason: "leading coefficient must be positive".into(),
            });
        }
        let cf = self.growth_constant();
        for k in 0..=200 {
            let r = -10.0 + 0.1 * k as f64;
            if self.f_second(r).abs() > cf * (1.0 + r.abs()) * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter {
                    name: "potential",
                    reason: format!("|f''({r})| exceeds c_f (1 + |r|)"),
                });
            }
        }
        if !(self.f_prime(10.0) > 0.0 && self.f_prime(-10.0) > 0.0) {
            return Err(Error::InvalidParameter {
                name: "potential",
                reason: "f' must be positive for large |r|".into(),
            });
        }
        Ok(())
    }

    /// Lower bound of `F` on `[-10, 10]` (sampled).
    pub fn sampled_min(&self) -> f64 {
        (0..=2000)
            .map(|k| self.big_f(-10.0 + 0.01 * k as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `(f(r), f'(r), F(r))` for the Landau potential.
pub fn landau(r: f64) -> (f64, f64, f64) {
    let p = Potential::landau();
    (p.f(r), p.f_prime(r), p.big_f(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChParams {
    pub beta: f64,
    pub lambda: f64,
    pub potential: Potential,
    /// Stabilization constant `S` of the linearly implicit step.
    pub stabilization: f64,
    /// Residual target for the fourth-order solve, relative to
    /// `|b| + |A| |x|` in the sup norm.
    pub tol: f64,
    pub max_iter: usize,
}

/// States are assumed to stay within this bound when sizing `S`.
pub const STABILIZATION_RANGE: f64 = 1.2;

impl ChParams {
    /// Default `S = lambda * max_{|r| <= 1.2} |f'(r)|`.
    pub fn new(beta: f64, lambda: f64, potential: Potential) -> Result<Self> {
        for (name, v) in [("beta", beta), ("lambda", lambda)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(Self {
            beta,
            lambda,
            potential,
            stabilization: lambda * potential.max_abs_f_prime(STABILIZATION_RANGE),
            tol: 1e-11,
            max_iter: 50_000,
        })
    }

    pub fn landau(beta: f64, lambda: f64) -> Result<Self> {
        Self::new(beta, lambda, Potential::landau())
    }
}

#[derive(Debug, Clone)]
pub struct ChState {
    pub phi: ScalarField,
    pub mu: ScalarField,
    pub t: f64,
}

impl ChState {
    pub fn new(phi: ScalarField, params: &ChParams) -> Result<Self> {
        let mu = chemical_potential(&phi, params.beta, params.lambda, &params.potential)?;
        Ok(Self { phi, mu, t: 0.0 })
    }
}

/// `mu = -beta laplacian(phi) + lambda f(phi)`.
pub fn chemical_potential(phi: &ScalarField, beta: f64, lambda: f64, pot: &Potential) -> Result<ScalarField> {
    let mut lap = vec![0.0; phi.values.len()];
    apply_laplacian(&phi.grid, neumann(phi)?, &phi.values, &mut lap)?;
    let values = phi
        .values
        .iter()
        .zip(&lap)
        .map(|(p, l)| -beta * l + lambda * pot.f(*p))
        .collect();
    Ok(ScalarField {
        grid: phi.grid,
        values,
        bc: [Bc::Neumann0; 2],
    })
}

fn neumann(phi: &ScalarField) -> Result<[Bc; 2]> {
    let dim = phi.grid.dim();
    if phi.bc[..dim].iter().any(|b| *b != Bc::Neumann0) {
        return Err(Error::InvalidParameter {
            name: "phi",
            reason: "order parameter must carry Neumann0 conditions".into(),
        });
    }
    Ok([Bc::Neumann0; 2])
}

/// Conservative central advection `div(u phi)` with `phi` averaged onto the
/// edges and zero flux through the boundary.
pub fn advection(u: &VectorField, phi: &ScalarField) -> Result<ScalarField> {
    let g = phi.grid;
    if u.grid != g {
        return Err(Error::DimensionMismatch("velocity and phase grids differ".into()));
    }
    let flux = edge_product(u, &phi.values);
    let mut out = ScalarField::zeros(g, Bc::Neumann0);
    divergence_into(&g, &flux, &vec![Bc::Dirichlet0; g.dim()], &mut out.values)?;
    Ok(out)
}

/// `u_e * (a_i + a_j) / 2` on every edge.
pub(crate) fn edge_product(u: &VectorField, a: &[f64]) -> Vec<Vec<f64>> {
    let g = u.grid;
    let nx = g.nx();
    let mut flux = u.components.clone();
    let cx = g.x.cells;
    for j in 0..g.ny() {
        for i in 0..cx {
            let k = i + j * nx;
            flux[0][i + j * cx] *= 0.5 * (a[k] + a[k + 1]);
        }
    }
    if let Some(ay) = g.y {
        for j in 0..ay.cells {
            for i in 0..nx {
                let k = i + j * nx;
                flux[1][k] *= 0.5 * (a[k] + a[k + nx]);
            }
        }
    }
    flux
}

/// Approximate diagonal of `I + dt (beta L^2 - S L)` from interior stencils.
fn fourth_order_diag(g: &Grid, dt: f64, beta: f64, s: f64) -> f64 {
    let ax = 1.0 / (g.hx() * g.hx());
    let ay = if g.dim() == 2 { 1.0 / (g.hy() * g.hy()) } else { 0.0 };
    let c = 2.0 * (ax + ay);
    let l2 = c * c + 2.0 * ax * ax + 2.0 * ay * ay;
    1.0 + dt * (beta * l2 + s * c)
}

/// One stabilized linearly implicit step:
///
/// `(phi+ - phi)/dt + div(u phi) = L(-beta L phi+ + lambda f(phi) + S (phi+ - phi))`,
///
/// then `mu+ = chemical_potential(phi+)`. The discrete mass is restored
/// exactly after the linear solve.
pub fn ch_step(state: &ChState, u: Option<&VectorField>, dt: f64, params: &ChParams) -> Result<ChState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let phi = &state.phi;
    let bc = neumann(phi)?;
    let g = phi.grid;
    let n = g.len();
    let (beta, lambda, s) = (params.beta, params.lambda, params.stabilization);

    // rhs = phi - dt div(u phi) + dt L(lambda f(phi) - S phi)
    let explicit: Vec<f64> = phi
        .values
        .iter()
        .map(|p| lambda * params.potential.f(*p) - s * p)
        .collect();
    let mut lap = vec![0.0; n];
    apply_laplacian(&g, bc, &explicit, &mut lap)?;
    let mut rhs: Vec<f64> = phi.values.iter().zip(&lap).map(|(p, l)| p + dt * l).collect();
    if let Some(u) = u {
        let adv = advection(u, phi)?;
        for (r, a) in rhs.iter_mut().zip(&adv.values) {
            *r -= dt * a;
        }
    }

    let w = g.node_weights();
    let b: Vec<f64> = rhs.iter().zip(&w).map(|(r, w)| r * w).collect();
    let d0 = fourth_order_diag(&g, dt, beta, s);
    // row sums of |L|; those of |L^2| are bounded by the square
    let abs_l = 4.0 * (1.0 / (g.hx() * g.hx()) + if g.dim() == 2 { 1.0 / (g.hy() * g.hy()) } else { 0.0 });
    let diag: Vec<f64> = w.iter().map(|w| w * d0).collect();
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    let mut x = phi.values.clone();
    pcg(
        |v, out| {
            apply_laplacian(&g, bc, v, &mut l1).expect("Neumann tags are set");
            apply_laplacian(&g, bc, &l1, &mut l2).expect("Neumann tags are set");
            for i in 0..n {
                out[i] = w[i] * (v[i] + dt * (beta * l2[i] - s * l1[i]));
            }
        },
        &b,
        &mut x,
        &diag,
        &w,
        &CgOptions {
            tol: params.tol,
            max_iter: params.max_iter,
            op_norm: 1.0 + dt * (beta * abs_l * abs_l + s * abs_l),
        },
    )?;

    let mut next = ScalarField {
        grid: g,
        values: x,
        bc,
    };
    let shift = (phi.integral() - next.integral()) / g.measure();
    next.values.iter_mut().for_each(|v| *v += shift);
    if !next.is_finite() {
        return Err(Error::NonFinite);
    }
    let mu = chemical_potential(&next, beta, lambda, &params.potential)?;
    Ok(ChState {
        phi: next,
        mu,
        t: state.t + dt,
    })
}

/// `1/2 ||u||^2 + beta/2 ||grad phi||^2 + lambda int F(phi)`.
pub fn energy(phi: &ScalarField, u: Option<&VectorField>, params: &ChParams) -> Result<f64> {
    let g = phi.grid;
    let mut grad = VectorField::zeros(g);
    gradient_into(&g, &phi.values, &mut grad.components);
    let bulk = ScalarField {
        grid: g,
        values: phi.values.iter().map(|p| params.potential.big_f(*p)).collect(),
        bc: phi.bc,
    };
    let kinetic = u.map_or(0.0, |u| 0.5 * u.dot(u));
    Ok(kinetic + 0.5 * params.beta * grad.dot(&grad) + params.lambda * bulk.integral())
}

/// Discrete average.
pub fn mean(phi: &ScalarField) -> f64 {
    phi.integral() / phi.grid.measure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn landau_values() {
        for r in [-1.0, 1.0] {
            let (f, _, big) = landau(r);
            assert_eq!(f, 0.0);
            assert_eq!(big, 0.0);
        }
        assert_eq!(landau(0.0), (0.0, -1.0, 0.25));
        let p = Potential::landau();
        assert_eq!(p.growth_constant(), 6.0);
        for k in 0..=200 {
            let r = -10.0 + 0.1 * k as f64;
            // direct differentiation: f'' = 6 r
            assert!((p.f_second(r) - 6.0 * r).abs() < 1e-12);
            assert!(p.f_second(r).abs() <= 6.0 * (1.0 + r.abs()));
            // F' = f by central differences
            let h = 1e-5;
            let fd = (p.big_f(r + h) - p.big_f(r - h)) / (2.0 * h);
            assert!((fd - p.f(r)).abs() < 1e-5 * (1.0 + r.abs().powi(3)));
        }
        p.validate().unwrap();
        assert!(p.sampled_min() >= 0.0);
        assert!((p.max_abs_f_prime(1.2) - (3.0 * 1.44 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn bad_potential_is_rejected() {
        assert!(Potential::quartic([0.0, 0.0, 1.0, 0.0, -1.0]).is_err());
        assert!(Potential::quartic([0.0, 0.0, 1.0, 0.0, 0.0]).is_err());
        assert!(Potential::quartic([0.0, 0.3, -1.0, 0.2, 0.5]).is_ok());
    }

    #[test]
    fn chemical_potential_of_wells_and_zero() {
        let g = Grid::interval(0.0, 1.0, 16).unwrap();
        let p = Potential::landau();
        for c in [1.0, -1.0, 0.0] {
            let phi = ScalarField::constant(g, Bc::Neumann0, c);
            let mu = chemical_potential(&phi, 0.1, 2.0, &p).unwrap();
            assert!(mu.norm_inf() < 1e-14);
        }
    }

    #[test]
    fn chemical_potential_linearization() {
        let (len, beta, lambda, eps) = (2.0, 0.05, 1.0, 1e-3);
        let g = Grid::interval(0.0, len, 256).unwrap();
        let phi = ScalarField::from_fn(g, Bc::Neumann0, |x, _| eps * (PI * x / len).cos());
        let mu = chemical_potential(&phi, beta, lambda, &Potential::landau()).unwrap();
        let k2 = (PI / len).powi(2);
        for (m, p) in mu.values.iter().zip(&phi.values) {
            let lin = (beta * k2 - lambda) * p;
            assert!((m - lin).abs() < 2e-9 + 1e-4 * eps, "{m} vs {lin}");
        }
    }

    #[test]
    fn wells_are_fixed_points() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), (12, 12)).unwrap();
        let params = ChParams::landau(0.01, 1.0).unwrap();
        for c in [1.0, -1.0] {
            let st = ChState::new(ScalarField::constant(g, Bc::Neumann0, c), &params).unwrap();
            let next = ch_step(&st, None, 1e-3, &params).unwrap();
            assert!(next.phi.axpy(-1.0, &st.phi).norm_inf() < 1e-13);
        }
    }

    #[test]
    fn mass_and_energy_on_random_data() {
        let g = Grid::interval(0.0, 1.0, 64).unwrap();
        let params = ChParams::landau(1e-3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut st = ChState::new(ScalarField::from_values(g, Bc::Neumann0, vals).unwrap(), &params).unwrap();
        let m0 = mean(&st.phi);
        let mut e = energy(&st.phi, None, &params).unwrap();
        for _ in 0..200 {
            st = ch_step(&st, None, 1e-4, &params).unwrap();
            assert!((mean(&st.phi) - m0).abs() < 1e-12);
            let e1 = energy(&st.phi, None, &params).unwrap();
            assert!(e1 <= e + 1e-12, "{e1} > {e}");
            e = e1;
        }
    }

    #[test]
    fn spinodal_mode_grows_at_linear_rate() {
        let (len, beta, lambda) = (2.0, 0.01, 1.0);
        let g = Grid::interval(0.0, len, 128).unwrap();
        let params = ChParams::landau(beta, lambda).unwrap();
        let k = PI / len;
        let mode = ScalarField::from_fn(g, Bc::Neumann0, |x, _| (k * x).cos());
        let amp = |f: &ScalarField| f.dot(&mode) / mode.dot(&mode);
        let mut st = ChState::new(mode.scaled(0.05), &params).unwrap();
        let (dt, steps) = (1e-3, 300);
        for _ in 0..steps {
            st = ch_step(&st, None, dt, &params).unwrap();
        }
        let observed = amp(&st.phi) / 0.05;
        let predicted = (k * k * (lambda - beta * k * k) * dt * steps as f64).exp();
        assert!(observed > 1.5);
        assert!((observed / predicted - 1.0).abs() < 0.05, "{observed} vs {predicted}");
    }

    #[test]
    fn energy_of_constant_states() {
        let g = Grid::rectangle((0.0, 2.0), (0.0, 3.0), (8, 8)).unwrap();
        let params = ChParams::landau(0.1, 2.0).unwrap();
        let one = ScalarField::constant(g, Bc::Neumann0, 1.0);
        assert!(energy(&one, None, &params).unwrap().abs() < 1e-14);
        let zero = ScalarField::constant(g, Bc::Neumann0, 0.0);
        let e = energy(&zero, None, &params).unwrap();
        assert!((e - 2.0 * 6.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn mean_of_cosine_vanishes() {
        let g = Grid::interval(0.0, 3.0, 30).unwrap();
        let phi = ScalarField::from_fn(g, Bc::Neumann0, |x, _| (2.0 * PI * x / 3.0).cos());
        assert!(mean(&phi).abs() < 1e-14);
        assert!((mean(&ScalarField::constant(g, Bc::Neumann0, 0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_bad_dt() {
        let g = Grid::interval(0.0, 1.0, 8).unwrap();
        let params = ChParams::landau(0.1, 1.0).unwrap();
        let st = ChState::new(ScalarField::constant(g, Bc::Neumann0, 0.1), &params).unwrap();
        assert!(ch_step(&st, None, 0.0, &params).is_err());
        assert!(ch_step(&st, None, -1.0, &params).is_err());
    }
}
