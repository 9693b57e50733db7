use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cd::GramProblem;
use super::SolverOptions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of `λ_max`.
    pub min_ratio: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            grid_len: 100,
            min_ratio: 1e-3,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvSelection {
    pub lambda: f64,
    /// Grid in decreasing order, truncated to the values every fold reached.
    pub grid: Vec<f64>,
    pub mean_errors: Vec<f64>,
}

/// Smallest penalty at which every coefficient is zero:
/// `max_j |A_jᵀy| / (n w_j)`.
pub fn lambda_max(design: &DMatrix<f64>, response: &DVector<f64>, weights: &[f64]) -> f64 {
    let n = design.nrows() as f64;
    design
        .column_iter()
        .zip(weights)
        .map(|(col, w)| col.dot(response).abs() / (n * w))
        .fold(0.0, f64::max)
}

/// `len` log-spaced values from `max` down to `max · min_ratio`.
pub fn log_grid(max: f64, min_ratio: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![max],
        _ => {
            let step = min_ratio.ln() / (len - 1) as f64;
            (0..len).map(|i| max * (step * i as f64).exp()).collect()
        }
    }
}

// Paths stop once any training fit is saturated, or once the mean error
// has gone this many grid points without improving on its best value.
const SATURATION_RSS_FRACTION: f64 = 1e-3;
const PATIENCE: usize = 10;

/// Selects the penalty minimising mean out-of-fold squared prediction error.
///
/// Fold membership is a seeded shuffle, so the selection is deterministic
/// for a given `seed`. Ties go to the larger penalty. All folds walk the grid
/// together from the largest penalty with warm starts; the returned grid is
/// the prefix that was evaluated.
pub fn select_lambda_cv(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &[f64],
    folds: usize,
    grid: &[f64],
    seed: u64,
    solver: &SolverOptions,
) -> Result<CvSelection> {
    let (n, m) = design.shape();
    if folds < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Parameter(format!("{n} samples cannot fill {folds} folds")));
    }
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::Parameter("penalty grid must be non-empty and strictly positive".into()));
    }
    if response.len() != n || weights.len() != m {
        return Err(Error::Shape("cross-validation inputs disagree in size".into()));
    }
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    if grid.len() == 1 {
        return Ok(CvSelection {
            lambda: grid[0],
            grid,
            mean_errors: vec![f64::NAN],
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (pos, &i) in order.iter().enumerate() {
        members[pos % folds].push(i);
    }
    for fold in &mut members {
        fold.sort_unstable();
    }

    let raw_gram = design.tr_mul(design);
    let raw_xty = design.tr_mul(response);
    let raw_yy = response.norm_squared();
    let mut states: Vec<FoldState> = members
        .par_iter()
        .map(|test| FoldState::new(design, response, test, &raw_gram, &raw_xty, raw_yy))
        .collect();

    let mut mean_errors = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (g, &lambda) in grid.iter().enumerate() {
        let steps: Vec<(f64, bool)> = states
            .par_iter_mut()
            .map(|state| state.step(lambda, weights, solver))
            .collect();
        let mean = steps.iter().map(|(e, _)| e).sum::<f64>() / folds as f64;
        mean_errors.push(mean);
        if mean < mean_errors[best] {
            best = g;
        }
        if steps.iter().any(|(_, saturated)| *saturated) || g - best >= PATIENCE {
            break;
        }
    }
    grid.truncate(mean_errors.len());
    Ok(CvSelection {
        lambda: grid[best],
        grid,
        mean_errors,
    })
}

struct FoldState {
    a_test: DMatrix<f64>,
    y_test: DVector<f64>,
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    yy: f64,
    n_train: f64,
    beta: Vec<f64>,
    grad: Vec<f64>,
}

impl FoldState {
    fn new(
        design: &DMatrix<f64>,
        response: &DVector<f64>,
        test: &[usize],
        raw_gram: &DMatrix<f64>,
        raw_xty: &DVector<f64>,
        raw_yy: f64,
    ) -> Self {
        let n_train = (design.nrows() - test.len()) as f64;
        let a_test = design.select_rows(test);
        let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| response[i]));
        let gram = (raw_gram - a_test.tr_mul(&a_test)) / n_train;
        let xty = ((raw_xty - a_test.tr_mul(&y_test)) / n_train).as_slice().to_vec();
        let yy = (raw_yy - y_test.norm_squared()) / n_train;
        FoldState {
            a_test,
            y_test,
            gram,
            beta: vec![0.0; xty.len()],
            grad: xty.clone(),
            xty,
            yy,
            n_train,
        }
    }

    /// Fits at `lambda` from the previous solution and returns the test
    /// error and whether the training fit is saturated.
    fn step(&mut self, lambda: f64, weights: &[f64], solver: &SolverOptions) -> (f64, bool) {
        let problem = GramProblem {
            gram: &self.gram,
            xty: &self.xty,
            yy: self.yy,
            weights,
            skip: None,
        };
        problem.solve(lambda, &mut self.beta, &mut self.grad, solver.tol, solver.max_iter, false);
        let pred = &self.a_test * DVector::from_column_slice(&self.beta);
        let err = (&self.y_test - pred).norm_squared() / self.y_test.len() as f64;
        let active = self.beta.iter().filter(|b| **b != 0.0).count();
        let saturated = active as f64 >= self.n_train - 1.0
            || problem.mean_rss(&self.beta, &self.grad) <= SATURATION_RSS_FRACTION * self.yy;
        (err, saturated)
    }
}
