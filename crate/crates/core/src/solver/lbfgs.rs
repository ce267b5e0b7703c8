//! Preconditioned limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the objective decrease stays below `rel_tol * scale` for `patience` steps.
    pub rel_tol: f64,
    pub scale: f64,
    pub patience: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iter: 5000,
            rel_tol: 1e-10,
            scale: 1.0,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` from `x0`. `f` writes its gradient and may return `+∞` outside
/// its domain; `precond` applies a symmetric positive approximation of the
/// inverse Hessian.
pub fn minimize<F, P>(mut f: F, precond: P, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return LbfgsOutcome {
            x,
            f: fx,
            iterations: 0,
            converged: false,
        };
    }
    if n == 0 {
        return LbfgsOutcome {
            x,
            f: fx,
            iterations: 0,
            converged: true,
        };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut quiet = 0usize;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for iter in 0..opts.max_iter {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let mut r = precond(&q);
        if let Some((s, y, _)) = hist.back() {
            let py = precond(y);
            let gamma = dot(s, y) / dot(y, &py);
            if gamma.is_finite() && gamma > 0.0 {
                r.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = precond(&g).iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                return LbfgsOutcome {
                    x,
                    f: fx,
                    iterations: iter,
                    converged: true,
                };
            }
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= if f_new.is_finite() { 0.5 } else { 0.25 };
        }
        if !accepted {
            // no progress possible at working precision
            let tiny = -slope <= opts.rel_tol * opts.scale;
            return LbfgsOutcome {
                x,
                f: fx,
                iterations: iter,
                converged: tiny || hist.is_empty(),
            };
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        if decrease <= opts.rel_tol * opts.scale.max(fx.abs()) {
            quiet += 1;
            if quiet >= opts.patience {
                return LbfgsOutcome {
                    x,
                    f: fx,
                    iterations: iter + 1,
                    converged: true,
                };
            }
        } else {
            quiet = 0;
        }
    }
    LbfgsOutcome {
        x,
        f: fx,
        iterations: opts.max_iter,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let out = minimize(f, |q| q.to_vec(), vec![-1.2, 1.0], &LbfgsOptions {
            rel_tol: 1e-16,
            ..Default::default()
        });
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn respects_domain_and_preconditioner() {
        // f(x) = Σ c_i (x_i - log x_i), minimum at x = 1, domain x > 0
        let c = [1.0, 1e3, 1e-2, 50.0];
        let f = |x: &[f64], g: &mut [f64]| {
            if x.iter().any(|&v| v <= 0.0) {
                return f64::INFINITY;
            }
            let mut acc = 0.0;
            for i in 0..4 {
                g[i] = c[i] * (1.0 - 1.0 / x[i]);
                acc += c[i] * (x[i] - x[i].ln());
            }
            acc
        };
        let pre = |q: &[f64]| q.iter().zip(&c).map(|(v, ci)| v / ci).collect();
        let out = minimize(f, pre, vec![3.0, 0.2, 5.0, 0.5], &LbfgsOptions {
            rel_tol: 1e-15,
            ..Default::default()
        });
        assert!(out.converged);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-5), "{:?}", out.x);
    }
}
