//! Classical parameter optimizers for the inner variational loop.
//!
//! Three families: gradient-based adaptive-moment descent (Adam), quasi-Newton
//! with an approximate inverse Hessian (BFGS-style), and a derivative-free
//! linear-surrogate trust-region method over a simplex. All three are
//! deterministic given (objective, start point, config).

use crate::error::{Error, Result};

/// Objective interface used by every optimizer. `gradient` defaults to
/// central finite differences over `value`.
pub trait CostFunction {
    fn value(&mut self, x: &[f64]) -> Result<f64>;

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = self.value(&xp)?;
            xp[i] = x[i] - h;
            let fm = self.value(&xp)?;
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }
}

/// Optimizer family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    QuasiNewton,
    DerivativeFree,
}

/// Shared optimizer configuration. Family-specific fields are ignored by the
/// other families.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator guard.
    pub epsilon: f64,
    /// Initial trust radius (derivative-free) / first line-search step scale.
    pub initial_radius: f64,
    /// Final trust radius (derivative-free stopping).
    pub final_radius: f64,
    pub max_iters: usize,
    /// Stop as soon as the objective drops to this value.
    pub cost_tolerance: f64,
    /// Stop when the gradient infinity-norm falls below this (gradient families).
    pub grad_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            initial_radius: 0.5,
            final_radius: 1e-8,
            max_iters: 2000,
            cost_tolerance: 0.0,
            grad_tolerance: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn quasi_newton() -> Self {
        Self {
            kind: OptimizerKind::QuasiNewton,
            ..Self::default()
        }
    }

    pub fn derivative_free() -> Self {
        Self {
            kind: OptimizerKind::DerivativeFree,
            ..Self::default()
        }
    }
}

/// Result of a minimization: best point, its value, and the per-step cost
/// trace (one entry per accepted iteration, starting with f(x0)).
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: Vec<f64>,
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_finite_vec(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Dispatch on the configured family.
pub fn minimize(f: &mut dyn CostFunction, x0: &[f64], cfg: &OptimizerConfig) -> Result<MinimizeResult> {
    match cfg.kind {
        OptimizerKind::Adam => adam_minimize(f, x0, cfg),
        OptimizerKind::QuasiNewton => quasi_newton_minimize(f, x0, cfg),
        OptimizerKind::DerivativeFree => derivative_free_minimize(f, x0, cfg),
    }
}

/// Adam with standard bias-corrected moment estimates.
pub fn adam_minimize(
    f: &mut dyn CostFunction,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<MinimizeResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut fx = check_finite(f.value(&x)?, "objective at start")?;
    let mut trace = vec![fx];
    let mut best = x.clone();
    let mut best_f = fx;
    for t in 1..=cfg.max_iters {
        // the entry point never satisfies the cost tolerance by fiat: a
        // warm start must still be refit against the current objective
        if t > 1 && fx <= cfg.cost_tolerance {
            break;
        }
        let g = f.gradient(&x)?;
        check_finite_vec(&g, "gradient")?;
        let gnorm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if gnorm < cfg.grad_tolerance {
            break;
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            x[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
        fx = check_finite(f.value(&x)?, "objective")?;
        trace.push(fx);
        if fx < best_f {
            best_f = fx;
            best = x.clone();
        }
    }
    Ok(MinimizeResult {
        x: best,
        value: best_f,
        trace,
    })
}

/// BFGS with backtracking Armijo line search; the inverse-curvature update is
/// skipped whenever the curvature condition s'y > 0 fails, keeping the
/// approximation positive definite.
pub fn quasi_newton_minimize(
    f: &mut dyn CostFunction,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<MinimizeResult> {
    quasi_newton_with_curvature(f, x0, cfg).map(|(r, _)| r)
}

/// As `quasi_newton_minimize` but also returns the final inverse-Hessian
/// approximation (row-major), so its convergence can be checked directly.
pub(crate) fn quasi_newton_with_curvature(
    f: &mut dyn CostFunction,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(MinimizeResult, Vec<f64>)> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = check_finite(f.value(&x)?, "objective at start")?;
    let mut g = f.gradient(&x)?;
    check_finite_vec(&g, "gradient")?;
    // inverse Hessian approximation, row-major
    let mut hinv = vec![0.0; n * n];
    for i in 0..n {
        hinv[i * n + i] = 1.0;
    }
    let mut trace = vec![fx];
    let mut best = x.clone();
    let mut best_f = fx;
    const C1: f64 = 1e-4;
    for t in 0..cfg.max_iters {
        if t > 0 && fx <= cfg.cost_tolerance {
            break;
        }
        let gnorm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if gnorm < cfg.grad_tolerance {
            break;
        }
        // direction p = -Hinv g
        let mut p = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += hinv[i * n + j] * g[j];
            }
            p[i] = -s;
        }
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // reset to steepest descent if curvature info went bad
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            for i in 0..n {
                p[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // backtracking line search
        let mut alpha = 1.0;
        let mut xn = vec![0.0; n];
        let mut fn_ = fx;
        let mut ok = false;
        for _ in 0..50 {
            for i in 0..n {
                xn[i] = x[i] + alpha * p[i];
            }
            fn_ = f.value(&xn)?;
            if fn_.is_finite() && fn_ <= fx + C1 * alpha * slope {
                ok = true;
                break;
            }
            alpha *= 0.5;
        }
        if !ok {
            // line search stalled; report best-so-far
            return Err(Error::OptimizerStalled {
                reason: format!("line search failed after 50 backtracks at f = {best_f:.6e}"),
                best_x: best.clone(),
                best_value: best_f,
            });
        }
        let gn = f.gradient(&xn)?;
        check_finite_vec(&gn, "gradient")?;
        // s = xn - x, y = gn - g
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            // BFGS inverse update: H' = (I - r s y')H(I - r y s') + r s s'
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += hinv[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += rho * rho * yhy * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * s[i] * s[j];
                }
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        if fx < best_f {
            best_f = fx;
            best = x.clone();
        }
    }
    Ok((
        MinimizeResult {
            x: best,
            value: best_f,
            trace,
        },
        hinv,
    ))
}

/// Derivative-free minimization: keeps a simplex of n+1 points, fits an affine
/// surrogate through them, and steps along its negative gradient within a
/// shrinking trust radius.
pub fn derivative_free_minimize(
    f: &mut dyn CostFunction,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<MinimizeResult> {
    let n = x0.len();
    let mut radius = cfg.initial_radius;

    let build_simplex = |center: &[f64], r: f64| -> Vec<Vec<f64>> {
        let mut pts = vec![center.to_vec()];
        for i in 0..n {
            let mut p = center.to_vec();
            p[i] += r;
            pts.push(p);
        }
        pts
    };

    let mut pts = build_simplex(x0, radius);
    let mut vals = Vec::with_capacity(n + 1);
    for p in &pts {
        vals.push(check_finite(f.value(p)?, "objective")?);
    }
    let mut best_idx = argmin(&vals);
    let mut trace = vec![vals[best_idx]];
    let mut reinitialized = false;

    for _ in 0..cfg.max_iters {
        if vals[best_idx] <= cfg.cost_tolerance || radius < cfg.final_radius {
            break;
        }
        // affine fit: gradient estimate from differences to the best point
        let base = pts[best_idx].clone();
        let fbase = vals[best_idx];
        let mut grad = vec![0.0; n];
        let mut degenerate = false;
        {
            // least-squares fit of g over the simplex edges (n x n system,
            // edges relative to the best vertex)
            let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
            let mut b = nalgebra::DVector::<f64>::zeros(n);
            let mut row = 0;
            for (i, p) in pts.iter().enumerate() {
                if i == best_idx {
                    continue;
                }
                for j in 0..n {
                    a[(row, j)] = p[j] - base[j];
                }
                b[row] = vals[i] - fbase;
                row += 1;
            }
            match a.lu().solve(&b) {
                Some(sol) => {
                    for j in 0..n {
                        grad[j] = sol[j];
                    }
                }
                None => degenerate = true,
            }
        }
        if degenerate {
            if reinitialized {
                return Err(Error::OptimizerStalled {
                    reason: "degenerate simplex after re-initialization".into(),
                    best_x: pts[best_idx].clone(),
                    best_value: vals[best_idx],
                });
            }
            reinitialized = true;
            pts = build_simplex(&base, radius);
            vals.clear();
            for p in &pts {
                vals.push(check_finite(f.value(p)?, "objective")?);
            }
            best_idx = argmin(&vals);
            continue;
        }
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            radius *= 0.5;
            continue;
        }
        let mut candidate = base.clone();
        for j in 0..n {
            candidate[j] -= radius * grad[j] / gnorm;
        }
        let fc = check_finite(f.value(&candidate)?, "objective")?;
        if fc < fbase {
            // replace the worst vertex
            let worst = argmax(&vals);
            pts[worst] = candidate;
            vals[worst] = fc;
            best_idx = argmin(&vals);
        } else {
            radius *= 0.5;
            // shrink the simplex toward the best vertex to match
            for (i, p) in pts.iter_mut().enumerate() {
                if i == best_idx {
                    continue;
                }
                for j in 0..n {
                    p[j] = base[j] + 0.5 * (p[j] - base[j]);
                }
                vals[i] = check_finite(f.value(p)?, "objective")?;
            }
            best_idx = argmin(&vals);
        }
        trace.push(vals[best_idx]);
    }
    Ok(MinimizeResult {
        x: pts[best_idx].clone(),
        value: vals[best_idx],
        trace,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut k = 0;
    for i in 1..v.len() {
        if v[i] < v[k] {
            k = i;
        }
    }
    k
}

fn argmax(v: &[f64]) -> usize {
    let mut k = 0;
    for i in 1..v.len() {
        if v[i] > v[k] {
            k = i;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Closure<F: FnMut(&[f64]) -> f64> {
        f: F,
        grad: Option<Box<dyn FnMut(&[f64]) -> Vec<f64>>>,
    }

    impl<F: FnMut(&[f64]) -> f64> CostFunction for Closure<F> {
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            Ok((self.f)(x))
        }

        fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
            match &mut self.grad {
                Some(g) => Ok(g(x)),
                None => {
                    let mut g = vec![0.0; x.len()];
                    let mut xp = x.to_vec();
                    for i in 0..x.len() {
                        let h = 1e-6 * x[i].abs().max(1.0);
                        xp[i] = x[i] + h;
                        let fp = (self.f)(&xp);
                        xp[i] = x[i] - h;
                        let fm = (self.f)(&xp);
                        xp[i] = x[i];
                        g[i] = (fp - fm) / (2.0 * h);
                    }
                    Ok(g)
                }
            }
        }
    }

    fn plain<F: FnMut(&[f64]) -> f64>(f: F) -> Closure<F> {
        Closure { f, grad: None }
    }

    #[test]
    fn adam_with_zero_gradient_stays_put() {
        let mut f = Closure {
            f: |_: &[f64]| 1.0,
            grad: Some(Box::new(|x: &[f64]| vec![0.0; x.len()])),
        };
        let cfg = OptimizerConfig::adam(0.05);
        let r = adam_minimize(&mut f, &[1.5, -2.0], &cfg).unwrap();
        assert_eq!(r.x, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_on_shifted_quadratic() {
        let mut f = plain(|x: &[f64]| (x[0] - 2.0) * (x[0] - 2.0));
        let mut cfg = OptimizerConfig::adam(0.05);
        cfg.max_iters = 1000;
        let r = adam_minimize(&mut f, &[0.0], &cfg).unwrap();
        assert!((r.x[0] - 2.0).abs() <= 1e-4, "got {}", r.x[0]);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        // With fresh moments, the bias-corrected ratio is g/|g|, so the first
        // update is eta * sign(g) up to the epsilon guard.
        let mut f = Closure {
            f: |x: &[f64]| 3.0 * x[0],
            grad: Some(Box::new(|_: &[f64]| vec![3.0])),
        };
        let mut cfg = OptimizerConfig::adam(0.05);
        cfg.max_iters = 1;
        let r = adam_minimize(&mut f, &[1.0], &cfg).unwrap();
        let step = 1.0 - r.x[0];
        assert!((step - 0.05).abs() < 1e-6, "step {step}");
    }

    #[test]
    fn quasi_newton_on_quadratic() {
        let mut f = plain(|x: &[f64]| (x[0] - 3.0) * (x[0] - 3.0));
        let mut cfg = OptimizerConfig::quasi_newton();
        cfg.grad_tolerance = 1e-12;
        let r = quasi_newton_minimize(&mut f, &[0.0], &cfg).unwrap();
        assert!((r.x[0] - 3.0).abs() <= 1e-8, "got {}", r.x[0]);
        assert!(r.trace.len() <= 11, "took {} iterations", r.trace.len() - 1);
    }

    #[test]
    fn quasi_newton_on_rosenbrock() {
        let mut f = plain(|x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        });
        let mut cfg = OptimizerConfig::quasi_newton();
        cfg.max_iters = 500;
        cfg.grad_tolerance = 1e-10;
        let r = quasi_newton_minimize(&mut f, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4,
            "got {:?}", r.x);
    }

    #[test]
    fn quasi_newton_inverse_hessian_converges_on_quadratic() {
        // f(x) = 1/2 x' A x with A = [[4, 1], [1, 3]]; the final BFGS
        // inverse-curvature approximation must match A^{-1}.
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let ainv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        let mut f = Closure {
            f: |x: &[f64]| 0.5 * (4.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 3.0 * x[1] * x[1]),
            grad: Some(Box::new(move |x: &[f64]| {
                vec![4.0 * x[0] + x[1], x[0] + 3.0 * x[1]]
            })),
        };
        let mut cfg = OptimizerConfig::quasi_newton();
        cfg.grad_tolerance = 1e-14;
        cfg.max_iters = 60;
        let (r, hinv) = quasi_newton_with_curvature(&mut f, &[5.0, -3.0], &cfg).unwrap();
        assert!(r.value < 1e-18, "final value {}", r.value);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (hinv[i * 2 + j] - ainv[i][j]).abs() < 1e-3,
                    "hinv {hinv:?} vs {ainv:?}"
                );
            }
        }
    }

    #[test]
    fn derivative_free_on_sphere() {
        let mut f = plain(|x: &[f64]| x.iter().map(|v| v * v).sum());
        let mut cfg = OptimizerConfig::derivative_free();
        cfg.max_iters = 5000;
        cfg.final_radius = 1e-10;
        let r = derivative_free_minimize(&mut f, &[1.0, 1.0], &cfg).unwrap();
        let norm: f64 = r.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "norm {norm}");
    }

    #[test]
    fn derivative_free_on_nonsmooth_abs() {
        let mut f = plain(|x: &[f64]| (x[0] - 1.0).abs());
        let mut cfg = OptimizerConfig::derivative_free();
        cfg.max_iters = 5000;
        cfg.final_radius = 1e-8;
        let r = derivative_free_minimize(&mut f, &[-0.5], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() <= 1e-2, "got {}", r.x[0]);
    }

    #[test]
    fn derivative_free_best_cost_is_non_increasing() {
        let mut f = plain(|x: &[f64]| {
            (x[0] - 0.3) * (x[0] - 0.3) + (x[1] + 0.7) * (x[1] + 0.7) + 0.1 * (x[0] * x[1]).sin()
        });
        let cfg = OptimizerConfig::derivative_free();
        let r = derivative_free_minimize(&mut f, &[2.0, 2.0], &cfg).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "trace not monotone: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn optimizers_are_deterministic() {
        let run = || {
            let mut f = plain(|x: &[f64]| {
                (x[0] - 0.5).powi(2) + 0.5 * (x[1] * 3.0).cos() + x[1] * x[1]
            });
            let cfg = OptimizerConfig::adam(0.03);
            adam_minimize(&mut f, &[1.0, 1.0], &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let mut f = plain(|x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] });
        let cfg = OptimizerConfig::adam(0.05);
        assert!(matches!(
            adam_minimize(&mut f, &[1.0], &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn final_cost_not_above_initial_on_convex_functions() {
        let convex: Vec<Box<dyn FnMut(&[f64]) -> f64>> = vec![
            Box::new(|x: &[f64]| x[0] * x[0] + x[1] * x[1]),
            Box::new(|x: &[f64]| (x[0] - 1.0).powi(2) + 4.0 * (x[1] + 2.0).powi(2)),
            Box::new(|x: &[f64]| x[0].abs() + x[1].abs()),
        ];
        for fbox in convex {
            let mut f = Closure { f: fbox, grad: None };
            let x0 = [1.3, -0.7];
            let f0 = f.value(&x0).unwrap();
            for cfg in [
                OptimizerConfig::adam(0.05),
                OptimizerConfig::quasi_newton(),
                OptimizerConfig::derivative_free(),
            ] {
                let mut cfg = cfg;
                cfg.max_iters = 300;
                let r = match minimize(&mut f, &x0, &cfg) {
                    Ok(r) => r,
                    Err(Error::OptimizerStalled { .. }) => continue,
                    Err(e) => panic!("{e}"),
                };
                assert!(r.value <= f0 + 1e-12);
            }
        }
    }
}
