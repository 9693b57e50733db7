//! Thin SVD of a design matrix and the spectral transforms built on it.
//!
//! A spectral transform is `F = Σ_i d_i u_i u_iᵀ` where `u_i` are the left
//! singular vectors of the design. Directions beyond the thin SVD (when
//! `n > p`) always carry weight one, so `F` is fully described by the
//! `min(n, p)` weights stored here and is never formed densely.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin singular value decomposition `X = U diag(Λ) Vᵀ` with `Λ` sorted
/// non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    singular_values: DVector<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl SvdFactors {
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// `n × min(n, p)` matrix with orthonormal columns.
    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// `p × min(n, p)` matrix with orthonormal columns.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn nrows(&self) -> usize {
        self.left.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.right.nrows()
    }

    /// Number of singular triplets, `min(n, p)`.
    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(self.singular_values.iter()) {
            col *= *s;
        }
        scaled * self.right.transpose()
    }
}

pub fn compute_svd(x: &DMatrix<f64>) -> Result<SvdFactors> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::Input(format!("design must be non-empty, got {n}x{p}")));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "non-finite design entry at row {}, column {}",
            pos % n,
            pos / n
        )));
    }

    let svd = x
        .clone()
        .try_svd(true, true, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let values = svd.singular_values;

    let r = values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let singular_values = DVector::from_iterator(r, order.iter().map(|&i| values[i].max(0.0)));
    let left = DMatrix::from_fn(n, r, |row, c| u[(row, order[c])]);
    let right = DMatrix::from_fn(p, r, |row, c| v_t[(order[c], row)]);

    let factors = SvdFactors {
        singular_values,
        left,
        right,
    };
    // The iteration can stall on exactly rank-deficient input without
    // reporting failure.
    let scale = x.amax().max(f64::MIN_POSITIVE);
    let error = (factors.reconstruct() - x).amax();
    if !(error <= 1e-8 * scale) {
        return Err(Error::Numeric(format!(
            "SVD reconstruction error {error:.3e} relative to max entry {scale:.3e}"
        )));
    }
    Ok(factors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    /// Project out the top `q` left singular directions.
    Decorrelate { q: usize },
    /// Cap the top singular values at `Λ_k` with `k = ⌊ρ (n ∧ p)⌋`.
    Trim { rho: f64, k: usize },
    Identity,
}

impl TransformKind {
    pub fn label(&self) -> &'static str {
        match self {
            TransformKind::Decorrelate { .. } => "decorrelate",
            TransformKind::Trim { .. } => "trim",
            TransformKind::Identity => "identity",
        }
    }
}

/// Spectral shrinkage operator tied to the SVD of the design it was built
/// from.
#[derive(Debug, Clone)]
pub struct SpectralTransform<'a> {
    kind: TransformKind,
    weights: Vec<f64>,
    svd: &'a SvdFactors,
}

impl<'a> SpectralTransform<'a> {
    pub fn identity(svd: &'a SvdFactors) -> Self {
        SpectralTransform {
            kind: TransformKind::Identity,
            weights: vec![1.0; svd.rank_bound()],
            svd,
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    /// Weights `d_1, …, d_{min(n,p)}`; all remaining weights are one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn svd(&self) -> &'a SvdFactors {
        self.svd
    }

    /// `Tr(FᵀF) = Σ_{i=1}^n d_i²`.
    pub fn trace_ftf(&self) -> f64 {
        let n = self.svd.nrows() as f64;
        n - self.weights.iter().map(|d| 1.0 - d * d).sum::<f64>()
    }

    /// Computes `F M` as `M − Σ_i (1 − d_i) u_i (u_iᵀ M)`, touching only the
    /// directions whose weight differs from one.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.svd.nrows();
        if m.nrows() != n {
            return Err(Error::Shape(format!(
                "transform built for {n} rows applied to a matrix with {} rows",
                m.nrows()
            )));
        }
        let shrunk: Vec<(usize, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != 1.0)
            .map(|(i, d)| (i, 1.0 - d))
            .collect();
        if shrunk.is_empty() {
            return Ok(m.clone());
        }

        let u = self.svd.left_vectors();
        let basis = DMatrix::from_fn(n, shrunk.len(), |r, c| u[(r, shrunk[c].0)]);
        let mut coeffs = basis.tr_mul(m);
        for (mut row, (_, s)) in coeffs.row_iter_mut().zip(shrunk.iter()) {
            row *= *s;
        }
        let mut out = m.clone();
        out.gemm(-1.0, &basis, &coeffs, 1.0);
        Ok(out)
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let out = self.apply(&m)?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }
}

/// `F_dc` with `d_i = I(i > q)`.
pub fn decorrelating_transform(svd: &SvdFactors, q: usize) -> Result<SpectralTransform<'_>> {
    let r = svd.rank_bound();
    if q >= r {
        return Err(Error::Parameter(format!(
            "factor count q = {q} must be below min(n, p) = {r}"
        )));
    }
    let weights = (0..r).map(|i| if i < q { 0.0 } else { 1.0 }).collect();
    Ok(SpectralTransform {
        kind: TransformKind::Decorrelate { q },
        weights,
        svd,
    })
}

/// Trim transform capping singular values at `Λ_k(X)`, `k = ⌊ρ (n ∧ p)⌋`.
///
/// When a factor estimate is supplied and `k < q̂ + 1` a warning is logged;
/// the transform is still built.
pub fn trim_transform(
    svd: &SvdFactors,
    rho: f64,
    factor_estimate: Option<usize>,
) -> Result<SpectralTransform<'_>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameter(format!("trim fraction rho = {rho} must lie in (0, 1)")));
    }
    let r = svd.rank_bound();
    let k = (rho * r as f64).floor() as usize;
    if k == 0 {
        return Err(Error::Parameter(format!(
            "trim level floor(rho * min(n, p)) is zero for rho = {rho}, min(n, p) = {r}"
        )));
    }
    if let Some(q_hat) = factor_estimate {
        if k < q_hat + 1 {
            log::warn!("trim level k = {k} is below estimated factor count + 1 = {}", q_hat + 1);
        }
    }
    let lambda = svd.singular_values();
    let cap = lambda[k - 1];
    if !(cap > 0.0) {
        return Err(Error::Degenerate(format!("trim cap singular value Λ_{k} is zero")));
    }
    let weights = (0..r)
        .map(|i| if i < k { (cap / lambda[i]).min(1.0) } else { 1.0 })
        .collect();
    Ok(SpectralTransform {
        kind: TransformKind::Trim { rho, k },
        weights,
        svd,
    })
}

/// Eigenvalue-ratio estimate `argmax_{1 ≤ k ≤ K} Λ_k / Λ_{k+1}` with
/// `K = min(k_max, min(n, p) − 1)`.
///
/// Ties go to the smallest `k`; a zero denominator counts as an infinite
/// ratio, so the first such `k` wins.
pub fn estimate_num_factors(svd: &SvdFactors, k_max: usize) -> Result<usize> {
    if k_max == 0 {
        return Err(Error::Parameter("k_max must be at least 1".into()));
    }
    let lambda = svd.singular_values();
    let r = lambda.len();
    if r < 2 {
        return Err(Error::Parameter(format!(
            "factor estimation needs min(n, p) >= 2, got {r}"
        )));
    }
    if lambda[0] <= 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let bound = k_max.min(r - 1);

    let mut best_k = 1;
    let mut best_ratio = f64::NEG_INFINITY;
    for k in 1..=bound {
        let (num, den) = (lambda[k - 1], lambda[k]);
        let ratio = if den == 0.0 {
            if num == 0.0 {
                continue;
            }
            f64::INFINITY
        } else {
            num / den
        };
        if ratio > best_ratio {
            best_ratio = ratio;
            best_k = k;
        }
        if ratio == f64::INFINITY {
            break;
        }
    }
    Ok(best_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
        compute_svd(m).unwrap().singular_values().iter().copied().collect()
    }

    fn factors_with(values: &[f64]) -> SvdFactors {
        let r = values.len();
        SvdFactors {
            singular_values: DVector::from_column_slice(values),
            left: DMatrix::identity(r, r),
            right: DMatrix::identity(r, r),
        }
    }

    #[test]
    fn identity_matrix_svd() {
        let svd = compute_svd(&DMatrix::identity(3, 3)).unwrap();
        for s in svd.singular_values().iter() {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_svd_is_axis_aligned() {
        let x = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let svd = compute_svd(&x).unwrap();
        assert!((svd.singular_values()[0] - 3.0).abs() < 1e-14);
        assert!((svd.singular_values()[1] - 2.0).abs() < 1e-14);
        let u = svd.left_vectors();
        assert!((u[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((u[(1, 1)].abs() - 1.0).abs() < 1e-14);
        assert!(u[(1, 0)].abs() < 1e-14 && u[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for (n, p) in [(5, 4), (4, 5), (7, 7)] {
            let x = random_matrix(n, p, 11);
            let svd = compute_svd(&x).unwrap();
            let rel = (svd.reconstruct() - &x).norm() / x.norm();
            assert!(rel <= 1e-8, "reconstruction error {rel}");
            let r = svd.rank_bound();
            let gu = svd.left_vectors().tr_mul(svd.left_vectors()) - DMatrix::identity(r, r);
            let gv = svd.right_vectors().tr_mul(svd.right_vectors()) - DMatrix::identity(r, r);
            assert!(gu.amax() <= 1e-8 && gv.amax() <= 1e-8);
            let s = svd.singular_values();
            assert!(s.iter().zip(s.iter().skip(1)).all(|(a, b)| a >= b));
            assert!(s.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut x = DMatrix::zeros(3, 2);
        x[(1, 1)] = f64::NAN;
        assert!(matches!(compute_svd(&x), Err(Error::Input(_))));
    }

    #[test]
    fn decorrelate_zero_is_identity() {
        let x = random_matrix(5, 4, 1);
        let svd = compute_svd(&x).unwrap();
        let t = decorrelating_transform(&svd, 0).unwrap();
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn decorrelate_rank_one_gives_zero() {
        let a = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let b = DVector::from_column_slice(&[2.0, 1.0, -1.0]);
        let x = &a * b.transpose();
        let svd = compute_svd(&x).unwrap();
        let out = decorrelating_transform(&svd, 1).unwrap().apply(&x).unwrap();
        assert!(out.amax() < 1e-12, "{}", out.amax());
    }

    #[test]
    fn decorrelate_matches_explicit_projection() {
        let x = random_matrix(5, 4, 2);
        let svd = compute_svd(&x).unwrap();
        let out = decorrelating_transform(&svd, 2).unwrap().apply(&x).unwrap();
        // Oracle: X − U₂U₂ᵀX with an explicitly formed 5×5 projector.
        let u2 = svd.left_vectors().columns(0, 2).into_owned();
        let projector = &u2 * u2.transpose();
        let expected = &x - projector * &x;
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn decorrelate_rejects_full_rank_q() {
        let svd = compute_svd(&random_matrix(5, 4, 3)).unwrap();
        assert!(matches!(decorrelating_transform(&svd, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn decorrelate_twice_equals_once() {
        let x = random_matrix(6, 5, 4);
        let m = random_matrix(6, 3, 5);
        let svd = compute_svd(&x).unwrap();
        let t = decorrelating_transform(&svd, 2).unwrap();
        let once = t.apply(&m).unwrap();
        let twice = t.apply(&once).unwrap();
        assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn decorrelate_top_singular_value_shifts() {
        let x = random_matrix(5, 4, 6);
        let svd = compute_svd(&x).unwrap();
        let out = decorrelating_transform(&svd, 2).unwrap().apply(&x).unwrap();
        let s_out = singular_values(&out);
        let s = svd.singular_values();
        assert!((s_out[0] - s[2]).abs() <= 1e-10 * s[2]);
        assert!((s_out[1] - s[3]).abs() <= 1e-10 * s[3]);
    }

    #[test]
    fn trim_hand_example() {
        // Λ = (4, 2, 1), ρ = 0.9 → k = 2 → capped at 2.
        let svd = factors_with(&[4.0, 2.0, 1.0]);
        let t = trim_transform(&svd, 0.9, None).unwrap();
        assert_eq!(t.kind(), TransformKind::Trim { rho: 0.9, k: 2 });
        assert_eq!(t.weights(), &[0.5, 1.0, 1.0]);
        let x = svd.reconstruct();
        let s = singular_values(&t.apply(&x).unwrap());
        for (got, want) in s.iter().zip([2.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn trim_equal_singular_values_is_identity() {
        let svd = factors_with(&[3.0, 3.0, 3.0, 3.0]);
        let t = trim_transform(&svd, 0.6, None).unwrap();
        assert!(t.weights().iter().all(|d| *d == 1.0));
        let x = svd.reconstruct();
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn trim_with_k_one_is_identity() {
        let x = random_matrix(5, 4, 7);
        let svd = compute_svd(&x).unwrap();
        let t = trim_transform(&svd, 0.3, None).unwrap();
        assert_eq!(t.kind(), TransformKind::Trim { rho: 0.3, k: 1 });
        assert_eq!(t.weights()[0], 1.0);
        assert!((t.apply(&x).unwrap() - &x).amax() < 1e-12);
    }

    #[test]
    fn trim_parameter_errors() {
        let svd = factors_with(&[3.0, 2.0, 1.0]);
        assert!(matches!(trim_transform(&svd, 0.0, None), Err(Error::Parameter(_))));
        assert!(matches!(trim_transform(&svd, 1.0, None), Err(Error::Parameter(_))));
        assert!(matches!(trim_transform(&svd, 0.2, None), Err(Error::Parameter(_))));
        // Below the factor bound only warns.
        assert!(trim_transform(&svd, 0.5, Some(3)).is_ok());
    }

    #[test]
    fn trace_of_decorrelate_is_n_minus_q() {
        let svd = compute_svd(&random_matrix(8, 5, 8)).unwrap();
        let t = decorrelating_transform(&svd, 3).unwrap();
        assert_eq!(t.trace_ftf(), 5.0);
        assert_eq!(SpectralTransform::identity(&svd).trace_ftf(), 8.0);
    }

    #[test]
    fn apply_checks_rows() {
        let svd = compute_svd(&random_matrix(5, 4, 9)).unwrap();
        let t = decorrelating_transform(&svd, 1).unwrap();
        assert!(matches!(t.apply(&DMatrix::zeros(4, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn factor_count_ratio_example() {
        let svd = factors_with(&[100.0, 50.0, 1.0, 0.9, 0.8]);
        assert_eq!(estimate_num_factors(&svd, 4).unwrap(), 2);
    }

    #[test]
    fn factor_count_ties_pick_smallest() {
        let svd = factors_with(&[2.0, 2.0, 2.0, 2.0]);
        assert_eq!(estimate_num_factors(&svd, 20).unwrap(), 1);
    }

    #[test]
    fn factor_count_zero_denominator() {
        let svd = factors_with(&[10.0, 0.0, 0.0]);
        assert_eq!(estimate_num_factors(&svd, 2).unwrap(), 1);
        let svd = factors_with(&[10.0, 9.0, 0.0, 0.0]);
        assert_eq!(estimate_num_factors(&svd, 3).unwrap(), 2);
    }

    #[test]
    fn factor_count_degenerate() {
        let svd = factors_with(&[0.0, 0.0, 0.0]);
        assert!(matches!(estimate_num_factors(&svd, 2), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_num_factors(&svd, 0), Err(Error::Parameter(_))));
    }
}
