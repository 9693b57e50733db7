//! Node-wise residualization, debiased coordinates and standardized
//! statistics, plus the end-to-end pipeline that produces them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::regression::cd::GramProblem;
use crate::regression::{
    column_weights, initial_estimate, kkt_bound, solve_certified, CvConfig,
    InitialEstimate, SolverOptions,
};
use crate::spectral::{
    compute_svd, decorrelating_transform, estimate_num_factors, trim_transform, SpectralTransform,
    TransformKind,
};

pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_K_MAX: usize = 20;
pub const DEFAULT_RHO: f64 = 0.3;

/// `κ √(log(p)/n)`.
pub fn default_lambda_j(n: usize, p: usize, kappa: f64) -> Result<f64> {
    if n < 2 || p < 2 {
        return Err(Error::Parameter(format!("need n, p >= 2, got n = {n}, p = {p}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Parameter(format!("kappa must be positive and finite, got {kappa}")));
    }
    Ok(kappa * ((p as f64).ln() / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct NodewiseResult {
    pub index: usize,
    /// Coefficients on the other `p − 1` columns, in column order.
    pub gamma_hat: DVector<f64>,
    pub z: DVector<f64>,
    /// `√n / ‖z‖₂`.
    pub tau: f64,
    pub lambda_j: f64,
    pub kkt_violation: f64,
    pub kkt_bound: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Decorrelated design with the Gram matrix and column weights shared by all
/// node-wise fits.
#[derive(Debug, Clone)]
pub struct NodewiseDesign<'a> {
    design: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    weights: Vec<f64>,
}

impl<'a> NodewiseDesign<'a> {
    pub fn new(design: &'a DMatrix<f64>) -> Result<Self> {
        if design.ncols() < 2 {
            return Err(Error::Input(format!(
                "node-wise regression needs at least 2 columns, got {}",
                design.ncols()
            )));
        }
        let weights = column_weights(design).context("decorrelated design")?;
        let gram = design.tr_mul(design) / design.nrows() as f64;
        Ok(NodewiseDesign {
            design,
            gram,
            weights,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.design
    }

    /// Lasso of column `j` on the remaining columns with weights
    /// `‖X_k‖/√n`, returning the residual direction `z_j`.
    pub fn residual(&self, j: usize, lambda_j: f64, opts: &SolverOptions) -> Result<NodewiseResult> {
        let (n, p) = self.design.shape();
        if j >= p {
            return Err(Error::Parameter(format!("coordinate {j} out of range for p = {p}")));
        }
        if !(lambda_j >= 0.0 && lambda_j.is_finite()) {
            return Err(Error::Parameter(format!("node-wise penalty must be finite and >= 0, got {lambda_j}")));
        }
        let xty: Vec<f64> = self.gram.column(j).iter().copied().collect();
        let problem = GramProblem {
            gram: &self.gram,
            xty: &xty,
            yy: self.gram[(j, j)],
            weights: &self.weights,
            skip: Some(j),
        };
        let target: Vec<f64> = self.design.column(j).iter().copied().collect();
        let mut beta = vec![0.0; p];
        let (outcome, z, kkt) =
            solve_certified(&problem, self.design, &target, lambda_j, &mut beta, opts)?;
        let norm = z.norm();
        if !(norm > 0.0) {
            return Err(Error::Degenerate(format!(
                "node-wise residual for coordinate {j} is zero (column is collinear with the others)"
            )));
        }
        let gamma_hat = DVector::from_iterator(
            p - 1,
            beta.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, b)| *b),
        );
        Ok(NodewiseResult {
            index: j,
            gamma_hat,
            z,
            tau: (n as f64).sqrt() / norm,
            lambda_j,
            kkt_violation: kkt,
            kkt_bound: kkt_bound(&target),
            converged: outcome.converged,
            iterations: outcome.sweeps,
        })
    }
}

/// Single node-wise fit with default solver options.
pub fn nodewise_residual(xdc: &DMatrix<f64>, j: usize, lambda_j: f64) -> Result<NodewiseResult> {
    NodewiseDesign::new(xdc)?.residual(j, lambda_j, &SolverOptions::default())
}

fn denominator(xdc: &DMatrix<f64>, nw: &NodewiseResult) -> Result<f64> {
    let j = nw.index;
    if j >= xdc.ncols() || nw.z.len() != xdc.nrows() {
        return Err(Error::Shape(format!("node-wise result for {j} does not match the design")));
    }
    let col = xdc.column(j);
    let denom = nw.z.dot(&col);
    if !(denom.abs() >= 1e-12 * nw.z.norm() * col.norm()) || denom == 0.0 {
        return Err(Error::Degenerate(format!(
            "z_j is orthogonal to column {j} (zᵀx_j = {denom:.3e})"
        )));
    }
    Ok(denom)
}

/// `β̄_j = β̂_j + zᵀ(Y − Xβ̂) / (zᵀX_j)` on the decorrelated data.
pub fn debias_coordinate(
    beta_hat: &DVector<f64>,
    xdc: &DMatrix<f64>,
    ydc: &DVector<f64>,
    nw: &NodewiseResult,
) -> Result<f64> {
    let denom = denominator(xdc, nw)?;
    if beta_hat.len() != xdc.ncols() || ydc.len() != xdc.nrows() {
        return Err(Error::Shape("coefficients or response do not match the design".into()));
    }
    let residual = ydc - xdc * beta_hat;
    Ok(beta_hat[nw.index] + nw.z.dot(&residual) / denom)
}

/// Equivalent form `zᵀ(Y − X_{−j}β̂_{−j}) / (zᵀX_j)`.
pub fn debias_coordinate_partial(
    beta_hat: &DVector<f64>,
    xdc: &DMatrix<f64>,
    ydc: &DVector<f64>,
    nw: &NodewiseResult,
) -> Result<f64> {
    let denom = denominator(xdc, nw)?;
    if beta_hat.len() != xdc.ncols() || ydc.len() != xdc.nrows() {
        return Err(Error::Shape("coefficients or response do not match the design".into()));
    }
    let mut others = beta_hat.clone();
    others[nw.index] = 0.0;
    let partial = ydc - xdc * others;
    Ok(nw.z.dot(&partial) / denom)
}

#[derive(Debug, Clone)]
pub struct DebiasedInference {
    pub beta_bar: DVector<f64>,
    pub tau: DVector<f64>,
    pub sigma_xi_hat: f64,
    /// `T_j = √n β̄_j / (σ̂_ξ τ_j)`.
    pub statistics: DVector<f64>,
    pub method_tag: TransformKind,
}

pub fn test_statistics(
    beta_bar: &DVector<f64>,
    tau: &DVector<f64>,
    sigma_xi_hat: f64,
    n: usize,
    method_tag: TransformKind,
) -> Result<DebiasedInference> {
    if !(sigma_xi_hat > 0.0 && sigma_xi_hat.is_finite()) {
        return Err(Error::Parameter(format!("noise level must be positive, got {sigma_xi_hat}")));
    }
    if beta_bar.len() != tau.len() {
        return Err(Error::Shape(format!("{} coefficients but {} scales", beta_bar.len(), tau.len())));
    }
    if let Some(j) = tau.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Parameter(format!("scale tau_{j} = {} is not positive", tau[j])));
    }
    let root_n = (n as f64).sqrt();
    let statistics = DVector::from_iterator(
        beta_bar.len(),
        beta_bar.iter().zip(tau.iter()).map(|(b, t)| root_n * b / (sigma_xi_hat * t)),
    );
    if let Some(j) = statistics.iter().position(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!("statistic {j} is not finite")));
    }
    Ok(DebiasedInference {
        beta_bar: beta_bar.clone(),
        tau: tau.clone(),
        sigma_xi_hat,
        statistics,
        method_tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FactorChoice {
    Estimate { k_max: usize },
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialTransform {
    Decorrelate,
    Trim { rho: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub factors: FactorChoice,
    pub initial: InitialTransform,
    pub kappa: f64,
    pub cv: CvConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            factors: FactorChoice::Estimate { k_max: DEFAULT_K_MAX },
            initial: InitialTransform::Decorrelate,
            kappa: DEFAULT_KAPPA,
            cv: CvConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineMetadata {
    pub q_hat: usize,
    pub q_estimated: bool,
    pub lambda: f64,
    pub lambda_j: Vec<f64>,
    pub sigma_xi_hat: f64,
    /// The uncorrected `Tr(FᵀF)` divisor was used for `σ̂²`.
    pub variance_fallback: bool,
    pub active_size: usize,
    pub unconverged_fits: usize,
    /// Largest KKT residual over all fits, relative to its own bound.
    pub max_kkt_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub inference: DebiasedInference,
    pub initial: InitialEstimate,
    pub nodewise: Vec<NodewiseResult>,
    pub metadata: PipelineMetadata,
}

/// Relative column norm below which a decorrelated column is rounding
/// noise rather than data.
const COLLAPSE_RATIO: f64 = 1e-8;

/// A column lying (numerically) inside the removed factor space carries no
/// information after decorrelation.
fn check_decorrelated_columns(x: &DMatrix<f64>, xdc: &DMatrix<f64>) -> Result<()> {
    if let Some(j) = x.column_iter().position(|c| c.norm() == 0.0) {
        return Err(Error::Input(format!("coordinate {}: design column is all zero", j + 1)));
    }
    for (j, (raw, dc)) in x.column_iter().zip(xdc.column_iter()).enumerate() {
        let before = raw.norm();
        if before > 0.0 && dc.norm() <= COLLAPSE_RATIO * before {
            return Err(Error::Degenerate(format!(
                "coordinate {}: column vanishes after removing the confounder directions",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Decorrelate, fit the initial Lasso, residualize every coordinate and
/// form the standardized statistics.
pub fn run_pipeline(x: &DMatrix<f64>, y: &DVector<f64>, config: &PipelineConfig) -> Result<PipelineOutput> {
    let (n, p) = x.shape();
    if n < 4 || p < 2 {
        return Err(Error::Input(format!("need n >= 4 and p >= 2, got n = {n}, p = {p}")));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("design has {n} rows, response {}", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("response entry {i} is not finite")));
    }
    let lambda_j = default_lambda_j(n, p, config.kappa)?;

    let svd = compute_svd(x)?;
    let (q_hat, q_estimated) = match config.factors {
        FactorChoice::Estimate { k_max } => {
            (estimate_num_factors(&svd, k_max).context("factor count estimation")?, true)
        }
        FactorChoice::Fixed(q) => (q, false),
    };
    let f_dc = decorrelating_transform(&svd, q_hat)?;
    let initial_transform: SpectralTransform<'_> = match config.initial {
        InitialTransform::Decorrelate => f_dc.clone(),
        InitialTransform::Trim { rho } => trim_transform(&svd, rho, Some(q_hat))?,
        InitialTransform::Identity => SpectralTransform::identity(&svd),
    };
    let xdc = f_dc.apply(x)?;
    check_decorrelated_columns(x, &xdc)?;
    let ydc = f_dc.apply_vector(y)?;
    let initial =
        initial_estimate(x, y, &initial_transform, &config.cv).context("initial estimate")?;

    let design = NodewiseDesign::new(&xdc)?;
    let solver = config.cv.solver;

    let per_coordinate: Vec<Result<(NodewiseResult, f64)>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let nw = design.residual(j, lambda_j, &solver)?;
            let beta_bar = debias_coordinate(&initial.beta_hat, &xdc, &ydc, &nw)?;
            Ok((nw, beta_bar))
        })
        .collect();
    let mut nodewise = Vec::with_capacity(p);
    let mut beta_bar = DVector::zeros(p);
    for (j, item) in per_coordinate.into_iter().enumerate() {
        let (nw, b) = item.with_context(|| format!("coordinate {}", j + 1))?;
        beta_bar[j] = b;
        nodewise.push(nw);
    }
    let tau = DVector::from_iterator(p, nodewise.iter().map(|nw| nw.tau));
    let inference = test_statistics(&beta_bar, &tau, initial.sigma_xi_hat, n, initial.transform_kind)?;

    let unconverged_fits =
        nodewise.iter().filter(|nw| !nw.converged).count() + usize::from(!initial.converged);
    let max_kkt_ratio = nodewise
        .iter()
        .map(|nw| nw.kkt_violation / nw.kkt_bound)
        .fold(initial.kkt_violation / initial.kkt_bound, f64::max);
    let metadata = PipelineMetadata {
        q_hat,
        q_estimated,
        lambda: initial.lambda,
        lambda_j: vec![lambda_j; p],
        sigma_xi_hat: initial.sigma_xi_hat,
        variance_fallback: initial.variance_fallback,
        active_size: initial.active_size,
        unconverged_fits,
        max_kkt_ratio,
    };
    Ok(PipelineOutput {
        inference,
        initial,
        nodewise,
        metadata,
    })
}
