//! Weighted Lasso by coordinate descent, cross-validated penalty selection
//! and the initial estimate `β̂`, `σ̂_ξ` used by the debiasing step.

pub(crate) mod cd;
mod cv;
mod initial;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use cd::GramProblem;

pub use cv::{lambda_max, log_grid, select_lambda_cv, CvConfig, CvSelection};
pub use initial::{initial_estimate, InitialEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Bound on the KKT residual accepted for a converged fit.
pub fn kkt_bound(response: &[f64]) -> f64 {
    let sup = response.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-6 * (1.0 + sup)
}

/// Column norms divided by `√n`, the diagonal of the penalty weight matrix.
/// A zero-norm column is an error naming its index.
pub fn column_weights(design: &DMatrix<f64>) -> Result<Vec<f64>> {
    let scale = (design.nrows() as f64).sqrt();
    design
        .column_iter()
        .enumerate()
        .map(|(j, col)| {
            let w = col.norm() / scale;
            if w > 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(Error::Input(format!("design column {j} has zero (or non-finite) norm")))
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LassoProblem<'a> {
    design: &'a DMatrix<f64>,
    response: &'a DVector<f64>,
    lambda: f64,
    weights: Vec<f64>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        design: &'a DMatrix<f64>,
        response: &'a DVector<f64>,
        lambda: f64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::Shape(format!(
                "design has {} rows but response has length {}",
                design.nrows(),
                response.len()
            )));
        }
        if weights.len() != design.ncols() {
            return Err(Error::Shape(format!(
                "{} penalty weights for {} columns",
                weights.len(),
                design.ncols()
            )));
        }
        if design.nrows() == 0 {
            return Err(Error::Input("empty design".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("penalty must be finite and >= 0, got {lambda}")));
        }
        if let Some(j) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Parameter(format!("penalty weight for column {j} must be positive")));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite value in Lasso data".into()));
        }
        Ok(LassoProblem {
            design,
            response,
            lambda,
            weights,
        })
    }

    /// Problem penalised by the design's own column weights.
    pub fn with_column_weights(
        design: &'a DMatrix<f64>,
        response: &'a DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let weights = column_weights(design)?;
        Self::new(design, response, lambda, weights)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        self.response
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(1/2n)‖y − Aβ‖² + λ Σ w_j |β_j|`.
    pub fn objective(&self, coefficients: &DVector<f64>) -> f64 {
        let n = self.design.nrows() as f64;
        let r = self.response - self.design * coefficients;
        let penalty: f64 = coefficients
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| w * b.abs())
            .sum();
        r.norm_squared() / (2.0 * n) + self.lambda * penalty
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    /// `response − design · coefficients`, computed directly.
    pub residual: DVector<f64>,
    pub active_set: Vec<usize>,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Largest KKT residual, measured from the exact residual.
    pub kkt_violation: f64,
    /// Objective value before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Largest KKT residual given the correlations `Aᵀr/n`.
pub(crate) fn kkt_violation(
    correlations: &[f64],
    beta: &[f64],
    weights: &[f64],
    lambda: f64,
    skip: Option<usize>,
) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..beta.len() {
        if Some(k) == skip {
            continue;
        }
        let level = lambda * weights[k];
        let v = if beta[k] != 0.0 {
            (correlations[k] - level * beta[k].signum()).abs()
        } else {
            (correlations[k].abs() - level).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Drives the Gram engine until its result also satisfies the KKT
/// certificate measured on the exact residual of `design`.
///
/// `target` is the regression target (a column of `design` for node-wise
/// fits); returns the residual and final KKT residual alongside the outcome.
pub(crate) fn solve_certified(
    problem: &GramProblem<'_>,
    design: &DMatrix<f64>,
    target: &[f64],
    lambda: f64,
    beta: &mut [f64],
    opts: &SolverOptions,
) -> Result<(cd::CdOutcome, DVector<f64>, f64)> {
    let n = design.nrows() as f64;
    let bound = kkt_bound(target);
    let mut grad = problem.gradient(beta);
    let mut tol = opts.tol;
    let mut total = cd::CdOutcome::default();
    let mut first = true;
    loop {
        let remaining = opts.max_iter.saturating_sub(total.sweeps);
        let out = problem.solve(lambda, beta, &mut grad, tol, remaining, true);
        total.sweeps += out.sweeps;
        total.converged = out.converged;
        // Consecutive rounds share their boundary point.
        let skip_first = usize::from(!first && !out.trace.is_empty());
        total.trace.extend(out.trace.into_iter().skip(skip_first));
        first = false;

        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite coefficient in coordinate descent".into()));
        }
        let fitted = design * DVector::from_column_slice(beta);
        let residual = DVector::from_iterator(
            target.len(),
            target.iter().zip(fitted.iter()).map(|(t, f)| t - f),
        );
        let corr: Vec<f64> = design.tr_mul(&residual).iter().map(|v| v / n).collect();
        let kkt = kkt_violation(&corr, beta, problem.weights, lambda, problem.skip);
        if !kkt.is_finite() {
            return Err(Error::Numeric("non-finite KKT residual".into()));
        }

        if !total.converged || kkt <= bound || total.sweeps >= opts.max_iter || tol < 1e-15 {
            total.converged = total.converged && kkt <= bound;
            return Ok((total, residual, kkt));
        }
        // Refresh the cached gradient from the exact residual and tighten.
        grad = corr;
        tol *= 1e-2;
    }
}

pub(crate) fn gram_and_xty(design: &DMatrix<f64>, response: &[f64]) -> (DMatrix<f64>, Vec<f64>, f64) {
    let n = design.nrows() as f64;
    let gram = design.tr_mul(design) / n;
    let y = DVector::from_column_slice(response);
    let xty = (design.tr_mul(&y) / n).as_slice().to_vec();
    let yy = y.norm_squared() / n;
    (gram, xty, yy)
}

/// Weighted Lasso by cyclic coordinate descent with Gram caching.
///
/// A fit reported as converged satisfies both the coefficient-change
/// tolerance and the KKT certificate `kkt_violation ≤ 1e-6 (1 + ‖y‖∞)`.
pub fn solve_lasso(problem: &LassoProblem<'_>, opts: &SolverOptions) -> Result<LassoFit> {
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("solver tolerance must be positive, got {}", opts.tol)));
    }
    let (gram, xty, yy) = gram_and_xty(problem.design, problem.response.as_slice());
    let gp = GramProblem {
        gram: &gram,
        xty: &xty,
        yy,
        weights: &problem.weights,
        skip: None,
    };
    let mut beta = vec![0.0; problem.design.ncols()];
    let (out, residual, kkt) = solve_certified(
        &gp,
        problem.design,
        problem.response.as_slice(),
        problem.lambda,
        &mut beta,
        opts,
    )?;
    let active_set = (0..beta.len()).filter(|&k| beta[k] != 0.0).collect();
    Ok(LassoFit {
        coefficients: DVector::from_vec(beta),
        lambda: problem.lambda,
        residual,
        active_set,
        iterations: out.sweeps,
        converged: out.converged,
        kkt_violation: kkt,
        objective_trace: out.trace,
    })
}
