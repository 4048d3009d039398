use hsch_core::grid::{divergence, gradient, laplacian, leray_project, solve_neumann_poisson, Bc, Grid, ScalarField, VectorField};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (4usize..20, 4usize..20, 0.5f64..3.0, 0.5f64..3.0)
        .prop_map(|(nx, ny, lx, ly)| Grid::rectangle((0.0, lx), (-ly / 2.0, ly / 2.0), (nx, ny)).unwrap())
}

fn fields(g: Grid, seed: [f64; 6]) -> (ScalarField, VectorField) {
    let f = ScalarField::from_fn(g, Bc::Neumann0, |x, y| (seed[0] * x + seed[1] * y).sin() + seed[2] * x * y);
    let v = VectorField::from_fn(g, |x, y| [(seed[3] * y).cos() + x * x, seed[4] * x - (seed[5] * x * y).sin()]);
    (f, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gradient_and_divergence_are_adjoint(g in grid_strategy(), s in prop::array::uniform6(-3.0f64..3.0)) {
        let (f, v) = fields(g, s);
        let lhs = gradient(&f).unwrap().dot(&v);
        let rhs = -f.dot(&divergence(&v).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn laplacian_is_div_grad_and_symmetric(g in grid_strategy(), s in prop::array::uniform6(-3.0f64..3.0)) {
        let (f, _) = fields(g, s);
        let h = ScalarField::from_fn(g, Bc::Neumann0, |x, y| (s[5] * x).cos() * (y + s[4]));
        let lf = laplacian(&f).unwrap();
        let a = lf.dot(&h);
        let b = f.dot(&laplacian(&h).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        // -<L f, f> = |grad f|^2
        let gf = gradient(&f).unwrap();
        prop_assert!((lf.dot(&f) + gf.dot(&gf)).abs() <= 1e-9 * (1.0 + gf.dot(&gf)));
    }

    #[test]
    fn leray_projection_is_solenoidal_and_idempotent(g in grid_strategy(), s in prop::array::uniform6(-3.0f64..3.0)) {
        let (_, v) = fields(g, s);
        let p = leray_project(&v).unwrap();
        let div = divergence(&p.u).unwrap().norm_inf();
        let scale = 1.0 + v.norm_inf() / g.hx().min(g.hy());
        prop_assert!(div <= 1e-8 * scale, "{}", div);
        let again = leray_project(&p.u).unwrap();
        prop_assert!(again.u.max_abs_diff(&p.u) <= 1e-8 * (1.0 + p.u.norm_inf()));
        // the removed part is orthogonal to the solenoidal one
        let removed = v.axpy(-1.0, &p.u);
        prop_assert!(removed.dot(&p.u).abs() <= 1e-8 * (1.0 + v.dot(&v)));
    }
}

#[test]
fn neumann_poisson_recovers_a_cosine() {
    let g = Grid::rectangle((0.0, 1.0), (0.0, 2.0), (32, 64)).unwrap();
    let pi = std::f64::consts::PI;
    let exact = |x: f64, y: f64| (pi * x).cos() * (pi * y / 2.0).cos();
    let rhs = ScalarField::from_fn(g, Bc::Neumann0, |x, y| -(pi * pi + pi * pi / 4.0) * exact(x, y));
    let sol = solve_neumann_poisson(&rhs).unwrap();
    let err = sol.q.axpy(-1.0, &ScalarField::from_fn(g, Bc::Neumann0, exact)).norm_inf();
    // second-order truncation on h = 1/32
    assert!(err < 5e-3, "{err}");
}
