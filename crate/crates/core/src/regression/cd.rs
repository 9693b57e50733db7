//! Cyclic coordinate descent on the covariance (Gram) form of the weighted
//! Lasso objective
//!
//! ```text
//! (1/2n)‖y − Aβ‖² + λ Σ_k w_k |β_k|
//!   = ½ yᵀy/n − cᵀβ + ½ βᵀGβ + λ Σ_k w_k |β_k|,   G = AᵀA/n, c = Aᵀy/n.
//! ```
//!
//! The engine keeps the gradient `g = c − Gβ` up to date, so one coordinate
//! update costs `O(m)` and never touches the design itself.
//!
//! Plain coordinate descent crawls when the columns share a few strong
//! common directions. After each full sweep the engine therefore also solves
//! the stationarity equations on the current active set with the current
//! signs held fixed, and moves towards that point as far as the signs allow.

use nalgebra::{Cholesky, DMatrix, DVector};

#[inline]
pub(crate) fn soft_threshold(x: f64, level: f64) -> f64 {
    if x > level {
        x - level
    } else if x < -level {
        x + level
    } else {
        0.0
    }
}

/// A Lasso problem in Gram form. `skip` pins one coordinate at zero, which
/// lets node-wise regressions reuse the Gram matrix of the full design.
pub(crate) struct GramProblem<'a> {
    pub gram: &'a DMatrix<f64>,
    pub xty: &'a [f64],
    pub yy: f64,
    pub weights: &'a [f64],
    pub skip: Option<usize>,
}

enum NewtonStep {
    Full,
    Blocked,
    Rejected,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CdOutcome {
    pub sweeps: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl GramProblem<'_> {
    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// `g = c − Gβ`, exploiting the sparsity of `β`.
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut grad = self.xty.to_vec();
        for (k, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                let col = self.gram.column(k);
                for (g, gk) in grad.iter_mut().zip(col.iter()) {
                    *g -= b * gk;
                }
            }
        }
        grad
    }

    pub fn objective(&self, lambda: f64, beta: &[f64], grad: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut penalty = 0.0;
        for k in 0..beta.len() {
            let b = beta[k];
            if b != 0.0 {
                // ½βᵀGβ − cᵀβ = −½ cᵀβ − ½ βᵀg
                quad -= 0.5 * b * (self.xty[k] + grad[k]);
                penalty += self.weights[k] * b.abs();
            }
        }
        0.5 * self.yy + quad + lambda * penalty
    }

    /// Training residual sum of squares divided by `n`.
    pub fn mean_rss(&self, beta: &[f64], grad: &[f64]) -> f64 {
        let mut acc = self.yy;
        for k in 0..beta.len() {
            if beta[k] != 0.0 {
                acc -= beta[k] * (self.xty[k] + grad[k]);
            }
        }
        acc.max(0.0)
    }

    fn update(&self, k: usize, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> f64 {
        let gkk = self.gram[(k, k)];
        let old = beta[k];
        let new = if gkk > 0.0 {
            soft_threshold(grad[k] + gkk * old, lambda * self.weights[k]) / gkk
        } else {
            0.0
        };
        if new == old {
            return 0.0;
        }
        let delta = new - old;
        beta[k] = new;
        let col = self.gram.column(k);
        for (g, gk) in grad.iter_mut().zip(col.iter()) {
            *g -= delta * gk;
        }
        delta.abs()
    }

    fn sweep_all(&self, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> f64 {
        let mut max_change = 0.0f64;
        for k in 0..self.dim() {
            if Some(k) == self.skip {
                continue;
            }
            max_change = max_change.max(self.update(k, lambda, beta, grad));
        }
        max_change
    }

    fn sweep_active(&self, lambda: f64, active: &[usize], beta: &mut [f64], grad: &mut [f64]) -> f64 {
        let mut max_change = 0.0f64;
        for &k in active {
            max_change = max_change.max(self.update(k, lambda, beta, grad));
        }
        max_change
    }

    /// Moves `beta` towards the minimiser of the objective restricted to the
    /// orthant of its current signs on `active`, stopping where the first
    /// coordinate reaches zero. The step is kept only if the objective drops.
    fn newton_step(&self, lambda: f64, active: &[usize], beta: &mut [f64], grad: &mut [f64]) -> NewtonStep {
        let a = active.len();
        if a == 0 {
            return NewtonStep::Rejected;
        }
        let sub = DMatrix::from_fn(a, a, |r, c| self.gram[(active[r], active[c])]);
        let Some(chol) = Cholesky::new(sub) else {
            return NewtonStep::Rejected;
        };
        let rhs = DVector::from_iterator(
            a,
            active
                .iter()
                .map(|&k| self.xty[k] - lambda * self.weights[k] * beta[k].signum()),
        );
        let target = chol.solve(&rhs);
        if target.iter().any(|t| !t.is_finite()) {
            return NewtonStep::Rejected;
        }
        let mut step = 1.0f64;
        let mut blocking = None;
        for (r, &k) in active.iter().enumerate() {
            if target[r] * beta[k].signum() <= 0.0 {
                let t = beta[k] / (beta[k] - target[r]);
                if t < step {
                    step = t;
                    blocking = Some(r);
                }
            }
        }
        let before = self.objective(lambda, beta, grad);
        let old: Vec<f64> = active.iter().map(|&k| beta[k]).collect();
        let mut moved = Vec::with_capacity(a);
        for (r, &k) in active.iter().enumerate() {
            let mut next = old[r] + step * (target[r] - old[r]);
            if Some(r) == blocking || next * old[r] < 0.0 {
                next = 0.0;
            }
            moved.push(next - old[r]);
            beta[k] = next;
        }
        self.shift_gradient(active, &moved, grad);
        if !(self.objective(lambda, beta, grad) <= before) {
            for (r, &k) in active.iter().enumerate() {
                beta[k] = old[r];
                moved[r] = -moved[r];
            }
            self.shift_gradient(active, &moved, grad);
            return NewtonStep::Rejected;
        }
        if blocking.is_some() {
            NewtonStep::Blocked
        } else {
            NewtonStep::Full
        }
    }

    /// Repeats sign-constrained Newton steps, dropping blocking coordinates
    /// from `active`, until one lands inside the orthant.
    fn newton_descent(&self, lambda: f64, active: &mut Vec<usize>, beta: &mut [f64], grad: &mut [f64]) {
        for _ in 0..=active.len() {
            match self.newton_step(lambda, active, beta, grad) {
                NewtonStep::Blocked => active.retain(|&k| beta[k] != 0.0),
                NewtonStep::Full | NewtonStep::Rejected => break,
            }
        }
    }

    fn shift_gradient(&self, cols: &[usize], deltas: &[f64], grad: &mut [f64]) {
        for (&k, &d) in cols.iter().zip(deltas.iter()) {
            if d != 0.0 {
                let col = self.gram.column(k);
                for (g, gk) in grad.iter_mut().zip(col.iter()) {
                    *g -= d * gk;
                }
            }
        }
    }

    /// Runs sweeps from the warm start `beta` (with matching `grad`) until a
    /// full sweep changes no coefficient by more than `tol`.
    ///
    /// Between full sweeps the engine iterates over the current active set
    /// only; every sweep of either kind counts towards `max_sweeps`.
    pub fn solve(
        &self,
        lambda: f64,
        beta: &mut [f64],
        grad: &mut [f64],
        tol: f64,
        max_sweeps: usize,
        record: bool,
    ) -> CdOutcome {
        let mut out = CdOutcome::default();
        if record {
            out.trace.push(self.objective(lambda, beta, grad));
        }
        let mut active = Vec::new();
        while out.sweeps < max_sweeps {
            let change = self.sweep_all(lambda, beta, grad);
            out.sweeps += 1;
            if record {
                out.trace.push(self.objective(lambda, beta, grad));
            }
            if change <= tol {
                out.converged = true;
                break;
            }
            active.clear();
            active.extend((0..beta.len()).filter(|&k| beta[k] != 0.0));
            self.newton_descent(lambda, &mut active, beta, grad);
            while out.sweeps < max_sweeps {
                let change = self.sweep_active(lambda, &active, beta, grad);
                out.sweeps += 1;
                if record {
                    out.trace.push(self.objective(lambda, beta, grad));
                }
                if change <= tol {
                    break;
                }
            }
        }
        out
    }
}
