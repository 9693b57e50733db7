//! Data-driven thresholding of standardized statistics with false discovery
//! control, and evaluation of a decision against a known support.
//!
//! Everything here depends only on the statistics vector and the level.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

/// Two-sided standard Gaussian tail `G(t) = 2(1 − Φ(t)) = erfc(t/√2)`.
pub fn gaussian_tail(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("tail argument must be >= 0, got {t}")));
    }
    Ok(tail(t))
}

#[inline]
fn tail(t: f64) -> f64 {
    erfc(t / SQRT_2)
}

/// Smallest `t ≥ 0` (to floating point resolution) with `G(t) ≤ prob`.
pub fn inverse_gaussian_tail(prob: f64) -> f64 {
    if prob >= 1.0 {
        return 0.0;
    }
    if !(prob > 0.0) {
        return f64::INFINITY;
    }
    if tail(0.0) <= prob {
        return 0.0;
    }
    // Bracket around the closed form, then bisect on the bit pattern so the
    // result is the boundary of the region as evaluated by `tail`.
    let guess = (SQRT_2 * erfc_inv(prob)).max(0.0);
    let mut hi = if guess.is_finite() { guess.max(f64::MIN_POSITIVE) } else { 40.0 };
    while tail(hi) > prob {
        hi = hi * 1.0001 + 1e-12;
    }
    let mut lo = guess.min(hi);
    while lo > 0.0 && tail(lo) <= prob {
        lo = (lo * 0.9999 - 1e-12).max(0.0);
    }
    // tail(lo) > prob >= tail(hi); positive floats order like their bits.
    let (mut a, mut b) = (lo.to_bits(), hi.to_bits());
    while b - a > 1 {
        let mid = a + (b - a) / 2;
        if tail(f64::from_bits(mid)) <= prob {
            b = mid;
        } else {
            a = mid;
        }
    }
    f64::from_bits(b)
}

/// Upper end of the threshold search, `t_p = √(2 log p − 2 log log p)`.
///
/// For `p = 1` this is `+∞`.
pub fn search_limit(p: usize) -> f64 {
    let lp = (p as f64).ln();
    (2.0 * lp - 2.0 * lp.ln()).sqrt()
}

/// Threshold used when the search finds nothing, `√(2 log p)`.
pub fn fallback_threshold(p: usize) -> f64 {
    (2.0 * (p as f64).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestDecision {
    pub alpha: f64,
    pub t_hat: f64,
    pub search_limit: f64,
    pub fallback_used: bool,
    /// Indices with `|T_j| ≥ t̂`, ascending.
    pub rejected: Vec<usize>,
    pub rejected_positive: Vec<usize>,
    pub rejected_negative: Vec<usize>,
    /// `p G(t̂) / (R(t̂) ∨ 1)`.
    pub estimated_fdp: f64,
}

impl TestDecision {
    pub fn is_rejected(&self, j: usize) -> bool {
        self.rejected.binary_search(&j).is_ok()
    }
}

/// Computes `t̂ = inf{0 ≤ t ≤ t_p : p G(t) / (R(t) ∨ 1) ≤ α}` and the signed
/// rejection sets, falling back to `√(2 log p)` when no such `t` exists.
///
/// `R(t)` is constant on each interval `(v_{i−1}, v_i]` between consecutive
/// distinct values of `|T_j|`, and `G` is continuous and decreasing, so on
/// each piece the criterion region is `[G⁻¹(α (R ∨ 1)/p), v_i]`. Scanning the
/// pieces in increasing order and solving for that left end gives the exact
/// infimum.
pub fn data_driven_threshold(stats: &[f64], alpha: f64) -> Result<TestDecision> {
    let p = stats.len();
    if p == 0 {
        return Err(Error::Input("no test statistics".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(j) = stats.iter().position(|t| !t.is_finite()) {
        return Err(Error::Input(format!("statistic {j} is not finite")));
    }

    let mut abs: Vec<f64> = stats.iter().map(|t| t.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let limit = search_limit(p);
    let pf = p as f64;

    let mut found = None;
    let mut lo = 0.0;
    let mut below = 0usize; // number of |T_j| strictly below the current piece
    loop {
        // Piece (lo, hi] (closed at 0 for the first piece) with R = p − below.
        let hi = if below < p { abs[below] } else { f64::INFINITY };
        let hi = hi.min(limit);
        if lo > limit {
            break;
        }
        let reject_count = p - below;
        let level = alpha * reject_count.max(1) as f64 / pf;
        let candidate = inverse_gaussian_tail(level).max(lo);
        if candidate <= hi {
            found = Some(candidate);
            break;
        }
        if below >= p || hi >= limit {
            break;
        }
        // Advance past every statistic equal to this piece's right end.
        lo = abs[below];
        while below < p && abs[below] <= lo {
            below += 1;
        }
    }

    let (t_hat, fallback_used) = match found {
        Some(t) => (t, false),
        None => (fallback_threshold(p), true),
    };

    let mut rejected = Vec::new();
    let mut rejected_positive = Vec::new();
    let mut rejected_negative = Vec::new();
    for (j, t) in stats.iter().enumerate() {
        if t.abs() >= t_hat {
            rejected.push(j);
            if *t > 0.0 {
                rejected_positive.push(j);
            } else if *t < 0.0 {
                rejected_negative.push(j);
            }
        }
    }
    let estimated_fdp = pf * tail(t_hat) / rejected.len().max(1) as f64;

    Ok(TestDecision {
        alpha,
        t_hat,
        search_limit: limit,
        fallback_used,
        rejected,
        rejected_positive,
        rejected_negative,
        estimated_fdp,
    })
}

/// Signed support of a coefficient vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedSupport {
    p: usize,
    positive: Vec<usize>,
    negative: Vec<usize>,
}

impl SignedSupport {
    pub fn new(p: usize, mut positive: Vec<usize>, mut negative: Vec<usize>) -> Result<Self> {
        positive.sort_unstable();
        negative.sort_unstable();
        positive.dedup();
        negative.dedup();
        if let Some(j) = positive.iter().chain(&negative).find(|&&j| j >= p) {
            return Err(Error::Input(format!("support index {j} out of range for p = {p}")));
        }
        if positive.iter().any(|j| negative.binary_search(j).is_ok()) {
            return Err(Error::Input("index listed with both signs".into()));
        }
        Ok(SignedSupport {
            p,
            positive,
            negative,
        })
    }

    pub fn from_coefficients(beta: &[f64]) -> Self {
        let positive = (0..beta.len()).filter(|&j| beta[j] > 0.0).collect();
        let negative = (0..beta.len()).filter(|&j| beta[j] < 0.0).collect();
        SignedSupport {
            p: beta.len(),
            positive,
            negative,
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn size(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    /// `+1`, `-1` or `0` for coordinate `j`.
    pub fn sign(&self, j: usize) -> i8 {
        if self.positive.binary_search(&j).is_ok() {
            1
        } else if self.negative.binary_search(&j).is_ok() {
            -1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub fdp: f64,
    pub power: f64,
    pub rejections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub sign_errors: usize,
}

/// Realised false discovery proportion, power and sign errors.
///
/// Power is `|S₀ ∩ Ŝ₀| / s₀`, reported as zero under the global null.
pub fn evaluate(decision: &TestDecision, truth: &SignedSupport) -> EvalMetrics {
    let mut true_positives = 0;
    let mut sign_errors = 0;
    for &j in &decision.rejected {
        match truth.sign(j) {
            0 => {}
            s => {
                true_positives += 1;
                let claimed = if decision.rejected_positive.binary_search(&j).is_ok() {
                    1
                } else if decision.rejected_negative.binary_search(&j).is_ok() {
                    -1
                } else {
                    0
                };
                if claimed != s {
                    sign_errors += 1;
                }
            }
        }
    }
    let rejections = decision.rejected.len();
    let false_positives = rejections - true_positives;
    let s0 = truth.size();
    EvalMetrics {
        fdp: false_positives as f64 / rejections.max(1) as f64,
        power: if s0 > 0 {
            true_positives as f64 / s0 as f64
        } else {
            0.0
        },
        rejections,
        true_positives,
        false_positives,
        sign_errors,
    }
}
