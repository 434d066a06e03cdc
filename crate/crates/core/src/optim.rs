//! Limited-memory BFGS with Armijo backtracking.
//!
//! The line search enforces sufficient decrease, falling back to the
//! approximate Armijo test of Hager and Zhang when `f` is flat to round-off.
//! Curvature pairs with `s^T y <= 0` are skipped instead of being added to the
//! history.

use std::collections::VecDeque;

/// Smooth objective over `R^n`.
pub trait Objective {
    /// Returns `f(x)` and writes the gradient into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Stopping test; the default is `||grad|| <= tol`.
    fn converged(&self, _x: &[f64], grad: &[f64], tol: f64) -> bool {
        norm(grad) <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtracking trial.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Relative slack on `f` for the approximate Armijo test.
    pub flat_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 500,
            tol: 1e-9,
            memory: 10,
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            flat_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct History {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    capacity: usize,
}

impl History {
    fn new(capacity: usize) -> Self {
        History {
            s: VecDeque::with_capacity(capacity),
            y: VecDeque::with_capacity(capacity),
            rho: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-300) || self.capacity == 0 {
            return false;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
        true
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if let (Some(s), Some(y)) = (self.s.back(), self.y.back()) {
            let gamma = dot(s, y) / dot(y, y);
            for qj in q.iter_mut() {
                *qj *= gamma;
            }
        }
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

pub fn minimize<O: Objective>(objective: &mut O, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective.value_and_gradient(&x, &mut g);
    let mut history = History::new(opts.memory);
    let mut x_trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    let mut iterations = 0;
    let mut converged = objective.converged(&x, &g, opts.tol);
    while !converged && iterations < opts.max_iters {
        let mut d = history.direction(&g);
        let mut slope = dot(&d, &g);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() {
            1.0 / norm(&g).max(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            for i in 0..n {
                x_trial[i] = x[i] + step * d[i];
            }
            let f_trial = objective.value_and_gradient(&x_trial, &mut g_trial);
            if f_trial.is_finite() && f_trial <= f + opts.c1 * step * slope {
                accepted = Some(f_trial);
                break;
            }
            // f is flat to round-off: decide from the directional derivative
            let flat = f_trial <= f + opts.flat_tol * f.abs();
            if flat && dot(&d, &g_trial) <= (2.0 * opts.c1 - 1.0) * slope {
                accepted = Some(f_trial);
                break;
            }
            step *= opts.shrink;
        }
        let Some(f_new) = accepted else {
            if history.is_empty() {
                break;
            }
            // stale curvature information; retry once along -g
            history.clear();
            continue;
        };

        iterations += 1;
        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        history.push(s, y);
        std::mem::swap(&mut x, &mut x_trial);
        std::mem::swap(&mut g, &mut g_trial);
        f = f_new;
        converged = objective.converged(&x, &g, opts.tol);
    }

    LbfgsResult {
        x,
        value: f,
        gradient: g,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value_and_gradient(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn value_and_gradient(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut f = 0.0;
            for (i, (&xi, &di)) in x.iter().zip(&self.0).enumerate() {
                g[i] = di * xi;
                f += 0.5 * di * xi * xi;
            }
            f
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize(&mut Rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default());
        assert!(r.converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let diag: Vec<f64> = (0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let x0 = vec![1.0; 20];
        let opts = LbfgsOptions {
            max_iters: 5000,
            ..Default::default()
        };
        let r = minimize(&mut Quadratic(diag), &x0, &opts);
        assert!(r.converged);
        assert!(r.x.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn stationary_start_takes_no_steps() {
        let r = minimize(
            &mut Quadratic(vec![1.0, 2.0]),
            &[0.0, 0.0],
            &LbfgsOptions::default(),
        );
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let opts = LbfgsOptions {
            max_iters: 2,
            ..Default::default()
        };
        let r = minimize(&mut Rosenbrock, &[-1.2, 1.0], &opts);
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
