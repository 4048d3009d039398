//! Causal time convolutions `(G * f)(t) = int_0^t G(t - s) f(s) ds`.
//!
//! Signals are lists of components (`f[j]` is the j-th component, a flat
//! array). `G` acts as a matrix on the components, so off-diagonal kernel
//! entries require all components to have the same length.
//!
//! Two engines are provided. [`ConvolutionState`] advances one step at a time
//! with a fixed amount of work per kernel mode: `f` is taken linear on each
//! step and integrated exactly against each exponential. [`conv_direct`]
//! sums over the stored history and serves as the reference.

use crate::error::{Error, Result};
use crate::kernel::MemoryKernel;

/// Per-step weights of the exact exponential integrator for one mode.
///
/// For `f` linear on `[t, t + dt]`,
/// `int_t^{t+dt} exp(-rate (t + dt - s)) f(s) ds = c_old f(t) + c_new f(t + dt)`,
/// and the running integral decays by `decay` over the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    pub decay: f64,
    pub c_old: f64,
    pub c_new: f64,
}

/// `phi_1(z) = (1 - e^{-z}) / z` and `phi_2(z) = (z - 1 + e^{-z}) / z^2`.
fn phi12(z: f64) -> (f64, f64) {
    if z < 0.5 {
        // Alternating series; 24 terms are far below rounding for z < 0.5.
        let (mut p1, mut p2) = (0.0, 0.0);
        let mut term = 1.0; // (-z)^k / (k+1)!
        for k in 0..24 {
            p1 += term;
            let t2 = term / (k as f64 + 2.0);
            p2 += t2;
            term *= -z / (k as f64 + 2.0);
        }
        (p1, p2)
    } else {
        let em = (-z).exp_m1();
        (-em / z, (z + em) / (z * z))
    }
}

/// Trapezoid weights on the sampled product: `dt/2 (decay f(t) + f(t + dt))`.
pub fn trapezoid_weights(rate: f64, dt: f64) -> StepWeights {
    let decay = (-rate * dt).exp();
    StepWeights {
        decay,
        c_old: 0.5 * dt * decay,
        c_new: 0.5 * dt,
    }
}

/// Exact integration weights. For `rate * dt` beyond a few hundred the decay
/// underflows to zero and the rule degenerates to `f(t + dt) / rate`.
pub fn step_weights(rate: f64, dt: f64) -> StepWeights {
    let z = rate * dt;
    let (p1, p2) = phi12(z);
    StepWeights {
        decay: (-z).exp(),
        c_old: dt * (p1 - p2),
        c_new: dt * p2,
    }
}

#[derive(Debug, Clone)]
struct Term {
    row: usize,
    col: usize,
    weight: f64,
    w: StepWeights,
    integral: Vec<f64>,
}

/// Running state of the fast convolution engine.
#[derive(Debug, Clone)]
pub struct ConvolutionState {
    dt: f64,
    t_last: f64,
    steps: usize,
    terms: Vec<Term>,
    shape: Vec<usize>,
    f_prev: Vec<Vec<f64>>,
    mode_updates: usize,
}

fn check_shape(kernel: &MemoryKernel, f: &[Vec<f64>]) -> Result<Vec<usize>> {
    if f.len() != kernel.dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel is {0}x{0}, signal has {1} components",
            kernel.dim(),
            f.len()
        )));
    }
    let shape: Vec<usize> = f.iter().map(Vec::len).collect();
    for i in 0..kernel.dim() {
        for j in 0..kernel.dim() {
            if i != j && !kernel.modes(i, j).is_empty() && shape[i] != shape[j] {
                return Err(Error::DimensionMismatch(
                    "coupled components must have equal lengths".into(),
                ));
            }
        }
    }
    Ok(shape)
}

impl ConvolutionState {
    /// Starts the convolution at `t = 0` with first sample `f0`, using the
    /// exact integrator for piecewise linear `f`.
    pub fn new(kernel: &MemoryKernel, dt: f64, f0: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_rule(kernel, dt, f0, Quadrature::ProductLinear)
    }

    pub fn with_rule(kernel: &MemoryKernel, dt: f64, f0: Vec<Vec<f64>>, rule: Quadrature) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {dt}"),
            });
        }
        let shape = check_shape(kernel, &f0)?;
        let mut terms = Vec::new();
        for row in 0..kernel.dim() {
            for col in 0..kernel.dim() {
                for m in kernel.modes(row, col) {
                    terms.push(Term {
                        row,
                        col,
                        weight: m.weight,
                        w: match rule {
                            Quadrature::Trapezoid => trapezoid_weights(m.rate, dt),
                            Quadrature::ProductLinear => step_weights(m.rate, dt),
                        },
                        integral: vec![0.0; shape[col]],
                    });
                }
            }
        }
        Ok(Self {
            dt,
            t_last: 0.0,
            steps: 0,
            terms,
            shape,
            f_prev: f0,
            mode_updates: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_last(&self) -> f64 {
        self.t_last
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of per-mode updates performed by the most recent step.
    pub fn mode_updates(&self) -> usize {
        self.mode_updates
    }

    pub fn last_sample(&self) -> &[Vec<f64>] {
        &self.f_prev
    }

    /// Current value `(G * f)(t_last)`.
    pub fn value(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.shape.iter().map(|&n| vec![0.0; n]).collect();
        for term in &self.terms {
            for (o, v) in out[term.row].iter_mut().zip(&term.integral) {
                *o += term.weight * v;
            }
        }
        out
    }

    /// Advances by `dt` with the new sample `f(t_last + dt)` and returns the
    /// convolution at the new time.
    pub fn step(&mut self, f_new: Vec<Vec<f64>>, dt: f64) -> Result<Vec<Vec<f64>>> {
        if (dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::StepMismatch {
                expected: self.dt,
                got: dt,
            });
        }
        let shape: Vec<usize> = f_new.iter().map(Vec::len).collect();
        if shape != self.shape {
            return Err(Error::DimensionMismatch(
                "sample shape changed between steps".into(),
            ));
        }
        // Terms sharing (col, mode) hold identical integrals; they are
        // updated independently to keep the loop free of bookkeeping.
        for term in &mut self.terms {
            let (old, new) = (&self.f_prev[term.col], &f_new[term.col]);
            let StepWeights { decay, c_old, c_new } = term.w;
            for ((i, o), n) in term.integral.iter_mut().zip(old).zip(new) {
                *i = decay * *i + c_old * o + c_new * n;
            }
        }
        self.mode_updates = self.terms.len();
        self.f_prev = f_new;
        self.steps += 1;
        self.t_last = self.steps as f64 * self.dt;
        Ok(self.value())
    }
}

/// Quadrature in time, shared by both engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Trapezoid rule on the sampled product `G(t - s_k) f(s_k)`.
    Trapezoid,
    /// `f` linear between samples, integrated exactly against each mode.
    ProductLinear,
}

/// Convolution at time `t` by summing over the stored history.
///
/// `samples` must start at `t = 0` and be uniformly spaced; `t` must be one
/// of the sample times.
pub fn conv_direct(
    kernel: &MemoryKernel,
    samples: &[(f64, Vec<Vec<f64>>)],
    t: f64,
    rule: Quadrature,
) -> Result<Vec<Vec<f64>>> {
    let Some((t0, f0)) = samples.first() else {
        return Err(Error::OutOfRange { t, t_max: 0.0 });
    };
    let shape = check_shape(kernel, f0)?;
    let zero: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
    if *t0 != 0.0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("history must start at t = 0, starts at {t0}"),
        });
    }
    let t_max = samples.last().map_or(0.0, |s| s.0);
    if samples.len() == 1 {
        return if t == 0.0 {
            Ok(zero)
        } else {
            Err(Error::OutOfRange { t, t_max })
        };
    }
    let dt = samples[1].0 - samples[0].0;
    for (k, (tk, fk)) in samples.iter().enumerate() {
        if (tk - k as f64 * dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "sample times must be uniformly spaced".into(),
            });
        }
        if fk.iter().map(Vec::len).ne(shape.iter().copied()) {
            return Err(Error::DimensionMismatch("sample shapes differ".into()));
        }
    }
    let n = (t / dt).round();
    if !(t >= 0.0) || (t - n * dt).abs() > 1e-9 * dt || n as usize >= samples.len() {
        return Err(Error::OutOfRange { t, t_max });
    }
    let n = n as usize;
    let mut out = zero;
    if n == 0 {
        return Ok(out);
    }
    for row in 0..kernel.dim() {
        for col in 0..kernel.dim() {
            for m in kernel.modes(row, col) {
                let dst = &mut out[row];
                match rule {
                    Quadrature::Trapezoid => {
                        for (k, (_, fk)) in samples[..=n].iter().enumerate() {
                            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
                            let g = m.weight * (-m.rate * (n - k) as f64 * dt).exp();
                            for (o, v) in dst.iter_mut().zip(&fk[col]) {
                                *o += w * g * v;
                            }
                        }
                    }
                    Quadrature::ProductLinear => {
                        let sw = step_weights(m.rate, dt);
                        for k in 0..n {
                            let g = m.weight * (-m.rate * (n - k - 1) as f64 * dt).exp();
                            let (a, b) = (&samples[k].1[col], &samples[k + 1].1[col]);
                            for ((o, x), y) in dst.iter_mut().zip(a).zip(b) {
                                *o += g * (sw.c_old * x + sw.c_new * y);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelMode;

    fn scalar(v: f64) -> Vec<Vec<f64>> {
        vec![vec![v]]
    }

    fn exp_kernel() -> MemoryKernel {
        MemoryKernel::single_mode(1, 1.0, 1.0).unwrap()
    }

    fn two_mode() -> MemoryKernel {
        MemoryKernel::isotropic(
            1,
            vec![
                KernelMode::new(0.7, 1.3).unwrap(),
                KernelMode::new(0.3, 9.0).unwrap(),
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn step_weights_small_and_large_arguments_agree_with_closed_form() {
        for &z in &[1e-8, 1e-3, 0.3, 0.49, 0.51, 2.0, 40.0] {
            let dt = 0.1;
            let a = z / dt;
            let w = step_weights(a, dt);
            let e = (-z).exp();
            let total = -(-z).exp_m1() / a;
            assert!(((w.c_old + w.c_new) - total).abs() <= 1e-14 * total.max(1e-300) + 1e-18);
            let b = (z - 1.0 + e) / (a * z);
            if z > 1e-3 {
                assert!((w.c_new - b).abs() <= 1e-10 * b);
            }
        }
        let w = step_weights(1e6, 1.0);
        assert_eq!(w.decay, 0.0);
        assert!((w.c_new - (1e6 - 1.0) / 1e12).abs() < 1e-20);
    }

    #[test]
    fn zero_signal_stays_zero() {
        let k = two_mode();
        let mut st = ConvolutionState::new(&k, 0.01, scalar(0.0)).unwrap();
        for _ in 0..50 {
            let v = st.step(scalar(0.0), 0.01).unwrap();
            assert_eq!(v[0][0], 0.0);
        }
        let samples: Vec<_> = (0..=10).map(|k| (k as f64 * 0.1, scalar(0.0))).collect();
        let d = conv_direct(&k, &samples, 1.0, Quadrature::Trapezoid).unwrap();
        assert_eq!(d[0][0], 0.0);
    }

    #[test]
    fn first_step_with_constant_signal() {
        let k = two_mode();
        let (c, dt) = (2.5, 0.05);
        let mut st = ConvolutionState::new(&k, dt, scalar(c)).unwrap();
        let v = st.step(scalar(c), dt).unwrap()[0][0];
        let expected: f64 = k
            .modes(0, 0)
            .iter()
            .map(|m| c * m.weight / m.rate * (1.0 - (-m.rate * dt).exp()))
            .sum();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_closed_form_is_second_order() {
        let k = exp_kernel();
        let err = |n: usize| {
            let dt = 1.0 / n as f64;
            let samples: Vec<_> = (0..=n).map(|i| (i as f64 * dt, scalar(1.0))).collect();
            let v = conv_direct(&k, &samples, 1.0, Quadrature::Trapezoid).unwrap()[0][0];
            (v - (1.0 - (-1.0_f64).exp())).abs()
        };
        let order = (err(100) / err(200)).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn two_mode_linear_signal_matches_antiderivative() {
        let k = two_mode();
        let dt = 1e-3;
        let n = 1000;
        let samples: Vec<_> = (0..=n).map(|i| (i as f64 * dt, scalar(i as f64 * dt))).collect();
        let t = 1.0;
        let exact: f64 = k
            .modes(0, 0)
            .iter()
            .map(|m| m.weight * (t / m.rate - (1.0 - (-m.rate * t).exp()) / (m.rate * m.rate)))
            .sum();
        for rule in [Quadrature::Trapezoid, Quadrature::ProductLinear] {
            let v = conv_direct(&k, &samples, t, rule).unwrap()[0][0];
            assert!((v - exact).abs() < 1e-6, "{rule:?}: {v} vs {exact}");
        }
    }

    #[test]
    fn errors() {
        let k = exp_kernel();
        let mut st = ConvolutionState::new(&k, 0.1, scalar(1.0)).unwrap();
        assert!(matches!(st.step(scalar(1.0), 0.2), Err(Error::StepMismatch { .. })));
        let samples: Vec<_> = (0..=4).map(|i| (i as f64 * 0.1, scalar(1.0))).collect();
        assert!(matches!(
            conv_direct(&k, &samples, 0.5, Quadrature::Trapezoid),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            conv_direct(&k, &samples, 0.15, Quadrature::Trapezoid),
            Err(Error::OutOfRange { .. })
        ));
        assert!(ConvolutionState::new(&k, 0.1, vec![vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn fast_engine_reproduces_direct_sums() {
        let k = two_mode();
        let dt = 0.01;
        let f = |i: usize| scalar((0.3 * i as f64).sin() + 0.1 * i as f64 * dt);
        for rule in [Quadrature::Trapezoid, Quadrature::ProductLinear] {
            let mut st = ConvolutionState::with_rule(&k, dt, f(0), rule).unwrap();
            let mut samples = vec![(0.0, f(0))];
            for i in 1..=200 {
                let v = st.step(f(i), dt).unwrap()[0][0];
                samples.push((i as f64 * dt, f(i)));
                if i % 50 == 0 {
                    let d = conv_direct(&k, &samples, i as f64 * dt, rule).unwrap()[0][0];
                    assert!((v - d).abs() <= 1e-13 * d.abs().max(1.0), "{rule:?} {v} {d}");
                }
            }
        }
    }

    #[test]
    fn cost_per_step_is_constant() {
        let k = two_mode();
        let mut st = ConvolutionState::new(&k, 0.01, scalar(0.0)).unwrap();
        let mut counts = Vec::new();
        for i in 0..200 {
            st.step(scalar((i as f64).sin()), 0.01).unwrap();
            counts.push(st.mode_updates());
        }
        assert!(counts.iter().all(|&c| c == 2));
    }
}
