//! Limited-memory BFGS with backtracking line search.
//!
//! The problem may expose a *frozen* local model: at every accepted iterate
//! the solver asks for a snapshot, and all trial points of the following
//! line search are evaluated against that snapshot. The estimation objective
//! uses this to hold the projection's active set fixed within a search.

use std::collections::VecDeque;

use nalgebra::DVector;

/// A function to minimise.
pub trait Objective {
    type Snapshot;

    /// Local state frozen for the line search started at `x`.
    fn snapshot(&self, x: &DVector<f64>) -> Self::Snapshot;

    /// Value and gradient at `x` under a frozen snapshot.
    fn evaluate(&self, x: &DVector<f64>, snap: &Self::Snapshot) -> (f64, DVector<f64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Stop when the relative decrease `(f_old - f_new) / max(|f_old|, |f_new|, 1)` falls below this.
    pub value_tolerance: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tolerance: 1e-6, step_tolerance: 1e-12, value_tolerance: 2.2e-9, memory: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    Step,
    Value,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl LbfgsReport {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Step | Termination::Value)
    }
}

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

fn two_loop(grad: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = s.dot(y) / y.dot(y);
        q *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

pub fn minimize<O: Objective>(obj: &O, x0: DVector<f64>, cfg: &LbfgsConfig) -> LbfgsReport {
    let mut x = x0;
    let mut snap = obj.snapshot(&x);
    let (mut f, mut g) = obj.evaluate(&x, &snap);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;

    let report = |x: DVector<f64>, f: f64, g: &DVector<f64>, it: usize, term| LbfgsReport {
        x,
        value: f,
        gradient_norm: g.amax(),
        iterations: it,
        termination: term,
    };

    if !f.is_finite() {
        return report(x, f, &g, 0, Termination::LineSearch);
    }

    while iterations < cfg.max_iterations {
        if g.amax() <= cfg.gradient_tolerance {
            return report(x, f, &g, iterations, Termination::Gradient);
        }
        iterations += 1;

        let mut dir = two_loop(&g, &history);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            history.clear();
            dir = -&g;
            slope = g.dot(&dir);
        }
        let mut step = if history.is_empty() { (1.0 / g.amax()).min(1.0) } else { 1.0 };

        // A trial must satisfy Armijo under the frozen snapshot and again after
        // re-linearising there, so the true objective decreases monotonically.
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &dir * step;
            let (ft, _) = obj.evaluate(&trial, &snap);
            let bound = f + ARMIJO * step * slope;
            if ft.is_finite() && ft <= bound {
                let trial_snap = obj.snapshot(&trial);
                let (f_true, g_true) = obj.evaluate(&trial, &trial_snap);
                if f_true.is_finite() && f_true <= bound {
                    accepted = Some((trial, trial_snap, f_true, g_true));
                    break;
                }
            }
            step *= BACKTRACK;
        }
        let Some((x_new, new_snap, f_new, g_new)) = accepted else {
            return report(x, f, &g, iterations, Termination::LineSearch);
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s.clone(), y, 1.0 / sy));
        }
        let small_step = s.amax() <= cfg.step_tolerance * (1.0 + x.amax());
        let small_decrease = (f - f_new).abs() <= cfg.value_tolerance * f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        snap = new_snap;
        if small_step {
            let term = if g.amax() <= cfg.gradient_tolerance { Termination::Gradient } else { Termination::Step };
            return report(x, f, &g, iterations, term);
        }
        if small_decrease {
            let term = if g.amax() <= cfg.gradient_tolerance { Termination::Gradient } else { Termination::Value };
            return report(x, f, &g, iterations, term);
        }
    }
    let term = if g.amax() <= cfg.gradient_tolerance { Termination::Gradient } else { Termination::MaxIterations };
    report(x, f, &g, iterations, term)
}

/// Adapter for plain smooth functions without a frozen local state.
pub struct Plain<F>(pub F);

impl<F> Objective for Plain<F>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    type Snapshot = ();

    fn snapshot(&self, _x: &DVector<f64>) {}

    fn evaluate(&self, x: &DVector<f64>, _snap: &()) -> (f64, DVector<f64>) {
        (self.0)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};

    #[test]
    fn rosenbrock() {
        let f = Plain(|x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = dvector![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        });
        let cfg = LbfgsConfig { gradient_tolerance: 1e-9, value_tolerance: 0.0, ..Default::default() };
        let r = minimize(&f, dvector![-1.2, 1.0], &cfg);
        assert!(r.converged(), "{:?}", r.termination);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{}", r.x);
    }

    #[test]
    fn convex_quadratic_closed_form() {
        // f = 1/2 x'Ax - b'x, optimum A^{-1} b
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = dvector![1.0, -2.0, 0.5];
        let f = Plain(|x: &DVector<f64>| {
            let ax = &a * x;
            (0.5 * x.dot(&ax) - b.dot(x), ax - &b)
        });
        let cfg = LbfgsConfig { gradient_tolerance: 1e-12, value_tolerance: 0.0, ..Default::default() };
        let r = minimize(&f, DVector::zeros(3), &cfg);
        let exact = a.clone().lu().solve(&b).unwrap();
        assert!((r.x - exact).amax() < 1e-9);
    }

    #[test]
    fn stops_at_iteration_cap() {
        let f = Plain(|x: &DVector<f64>| (x[0].powi(4), dvector![4.0 * x[0].powi(3)]));
        let cfg = LbfgsConfig { max_iterations: 2, gradient_tolerance: 1e-30, value_tolerance: 0.0, ..Default::default() };
        let r = minimize(&f, dvector![3.0], &cfg);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.termination, Termination::MaxIterations);
    }
}
