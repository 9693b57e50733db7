use nalgebra::{DMatrix, DVector};

use super::cv::{lambda_max, log_grid, select_lambda_cv, CvConfig};
use super::{column_weights, solve_lasso, LassoProblem};
use crate::error::{Error, Result, ResultExt};
use crate::spectral::{SpectralTransform, TransformKind};

/// Initial Lasso estimate on the transformed data together with the
/// noise level estimate.
#[derive(Debug, Clone)]
pub struct InitialEstimate {
    pub beta_hat: DVector<f64>,
    pub sigma_xi_hat: f64,
    pub transform_kind: TransformKind,
    pub lambda: f64,
    /// Size of the active set `ŝ`.
    pub active_size: usize,
    /// `Tr(FᵀF)` of the transform.
    pub trace: f64,
    /// Divisor actually used for `σ̂²`.
    pub variance_divisor: f64,
    /// Set when `Tr(FᵀF) − ŝ ≤ n/10` forced the uncorrected divisor.
    pub variance_fallback: bool,
    pub converged: bool,
    pub kkt_violation: f64,
    /// KKT bound that applied to this fit.
    pub kkt_bound: f64,
}

/// Fits `β̂` by Lasso of `FY` on `FX` at the cross-validated penalty and
/// estimates `σ̂_ξ² = ‖FY − FXβ̂‖² / (Tr(FᵀF) − ŝ)`.
///
/// The `− ŝ` degrees-of-freedom term offsets the optimism of a
/// cross-validated fit. If it would leave a divisor of at most `n/10`, the
/// plain `Tr(FᵀF)` is used and `variance_fallback` is set.
pub fn initial_estimate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    transform: &SpectralTransform<'_>,
    cv: &CvConfig,
) -> Result<InitialEstimate> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Shape(format!("design has {n} rows, response {}", y.len())));
    }
    if transform.svd().nrows() != n || transform.svd().ncols() != x.ncols() {
        return Err(Error::Shape("transform was built from a different design".into()));
    }
    let fx = transform.apply(x)?;
    let fy = transform.apply_vector(y)?;
    let weights = column_weights(&fx).context("transformed design")?;

    let lmax = lambda_max(&fx, &fy, &weights);
    let (lambda, fit) = if lmax > 0.0 {
        let grid = log_grid(lmax, cv.min_ratio, cv.grid_len.max(1));
        let selection = select_lambda_cv(&fx, &fy, &weights, cv.folds, &grid, cv.seed, &cv.solver)
            .context("penalty cross-validation")?;
        let problem = LassoProblem::new(&fx, &fy, selection.lambda, weights)?;
        (selection.lambda, solve_lasso(&problem, &cv.solver)?)
    } else {
        let problem = LassoProblem::new(&fx, &fy, 0.0, weights)?;
        (0.0, solve_lasso(&problem, &cv.solver)?)
    };
    if !fit.converged {
        log::warn!(
            "initial Lasso stopped after {} sweeps without meeting tolerance",
            fit.iterations
        );
    }

    let rss = fit.residual.norm_squared();
    let trace = transform.trace_ftf();
    let active_size = fit.active_set.len();
    let corrected = trace - active_size as f64;
    let (divisor, fallback) = if corrected <= n as f64 / 10.0 {
        (trace, true)
    } else {
        (corrected, false)
    };
    if !(rss > 0.0) {
        return Err(Error::Degenerate(format!(
            "transformed residual is exactly zero (active set {active_size}, trace {trace})"
        )));
    }
    let sigma_xi_hat = (rss / divisor).sqrt();
    if !sigma_xi_hat.is_finite() {
        return Err(Error::Numeric("noise level estimate is not finite".into()));
    }

    Ok(InitialEstimate {
        beta_hat: fit.coefficients,
        sigma_xi_hat,
        transform_kind: transform.kind(),
        lambda,
        active_size,
        trace,
        variance_divisor: divisor,
        variance_fallback: fallback,
        converged: fit.converged,
        kkt_violation: fit.kkt_violation,
        kkt_bound: super::kkt_bound(fy.as_slice()),
    })
}
