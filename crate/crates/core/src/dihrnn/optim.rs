//! Small first-order optimizers over a loss that may return `+inf` for
//! parameters whose unroll diverges.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Limited-memory BFGS with Armijo backtracking.
    #[default]
    Lbfgs,
    /// Fixed learning rate, halved whenever a step fails to decrease the loss.
    GradientDescent,
}

#[derive(Debug, Clone)]
pub(crate) struct OptOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn small_change(f_old: f64, f_new: f64, tol: f64) -> bool {
    (f_old - f_new).abs() <= tol * (1.0 + f_new.abs())
}

/// Two consecutive small loss changes count as convergence.
const PATIENCE: usize = 2;

pub(crate) fn lbfgs<F>(mut f: F, x0: Vec<f64>, max_iter: usize, tol: f64, memory: usize) -> OptOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return OptOutcome { x, f: fx, iters: 0, converged: false };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut xt = vec![0.0; dim];
    let mut gt = vec![0.0; dim];
    let mut quiet = 0;
    let mut iters = 0;

    while iters < max_iter {
        iters += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        if slope == 0.0 {
            return OptOutcome { x, f: fx, iters, converged: true };
        }

        let mut step = if hist.is_empty() {
            let gn = dot(&g, &g).sqrt();
            (1.0 / gn).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..dim {
                xt[i] = x[i] + step * d[i];
            }
            let ft = f(&xt, &mut gt);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if hist.is_empty() {
                // steepest descent cannot make progress either
                return OptOutcome { x, f: fx, iters, converged: true };
            }
            hist.clear();
            continue;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let f_old = fx;
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        fx = ft;
        if small_change(f_old, fx, tol) {
            quiet += 1;
            if quiet >= PATIENCE {
                return OptOutcome { x, f: fx, iters, converged: true };
            }
        } else {
            quiet = 0;
        }
    }
    OptOutcome { x, f: fx, iters, converged: false }
}

pub(crate) fn gradient_descent<F>(mut f: F, x0: Vec<f64>, lr: f64, max_iter: usize, tol: f64) -> OptOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return OptOutcome { x, f: fx, iters: 0, converged: false };
    }
    let mut lr = lr;
    let mut xt = vec![0.0; dim];
    let mut gt = vec![0.0; dim];
    let mut quiet = 0;
    for iters in 1..=max_iter {
        for i in 0..dim {
            xt[i] = x[i] - lr * g[i];
        }
        let ft = f(&xt, &mut gt);
        if !(ft.is_finite() && ft <= fx) {
            lr *= 0.5;
            if lr < 1e-300 {
                return OptOutcome { x, f: fx, iters, converged: true };
            }
            continue;
        }
        let f_old = fx;
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = ft;
        if small_change(f_old, fx, tol) {
            quiet += 1;
            if quiet >= PATIENCE {
                return OptOutcome { x, f: fx, iters, converged: true };
            }
            // plateau: try a finer step before giving up
            lr *= 0.5;
        } else {
            quiet = 0;
        }
    }
    OptOutcome { x, f: fx, iters: max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let out = lbfgs(rosenbrock, vec![-1.2, 1.0], 500, 1e-14, 10);
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out.x);
    }

    #[test]
    fn gd_solves_quadratic() {
        let q = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 8.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2)
        };
        let out = gradient_descent(q, vec![0.0, 0.0], 0.5, 10_000, 1e-16);
        assert!((out.x[0] - 3.0).abs() < 1e-6 && (out.x[1] + 1.0).abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn infinite_regions_are_backed_out_of() {
        // finite only inside |x| < 2
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0].abs() >= 2.0 {
                return f64::INFINITY;
            }
            g[0] = 2.0 * (x[0] - 1.5);
            (x[0] - 1.5).powi(2)
        };
        let out = lbfgs(f, vec![-1.9], 200, 1e-14, 5);
        assert!((out.x[0] - 1.5).abs() < 1e-6);
    }
}
