//! Confounded factor-model data generator.
//!
//! `X = HΨ + E`, `Y = Xβ + Hφ + ξ` with `H`, `ξ` standard Gaussian, `Ψ`
//! uniform on `(−2, 2)`, `φ ~ N(μ, 1)` and rows of `E` drawn from
//! `N(0, Ω_E⁻¹)` for a graph-structured precision matrix `Ω_E`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TruthRecord};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Smallest eigenvalue every generated precision matrix must reach.
pub const DEFAULT_PD_FLOOR: f64 = 0.05;
pub const DEFAULT_EDGE_WEIGHT: f64 = 0.3;
pub const DEFAULT_BAND_WEIGHTS: [f64; 2] = [0.4, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GraphSpec {
    Identity,
    /// Each off-diagonal pair is an edge with probability `edge_prob`
    /// (default `4/p`) carrying weight `edge_weight`.
    ErdosRenyi {
        edge_prob: Option<f64>,
        edge_weight: f64,
        pd_floor: f64,
    },
    /// `ω_{j,j±k} = band_weights[k−1]`.
    Banded { band_weights: Vec<f64>, pd_floor: f64 },
}

impl GraphSpec {
    pub fn erdos_renyi() -> Self {
        GraphSpec::ErdosRenyi {
            edge_prob: None,
            edge_weight: DEFAULT_EDGE_WEIGHT,
            pd_floor: DEFAULT_PD_FLOOR,
        }
    }

    pub fn banded() -> Self {
        GraphSpec::Banded {
            band_weights: DEFAULT_BAND_WEIGHTS.to_vec(),
            pd_floor: DEFAULT_PD_FLOOR,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GraphSpec::Identity => "identity",
            GraphSpec::ErdosRenyi { .. } => "erdos-renyi",
            GraphSpec::Banded { .. } => "banded",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GraphSpec::Identity => Ok(()),
            GraphSpec::ErdosRenyi {
                edge_prob,
                edge_weight,
                pd_floor,
            } => {
                if let Some(prob) = edge_prob {
                    if !(*prob > 0.0 && *prob < 1.0) {
                        return Err(Error::Parameter(format!("edge probability {prob} not in (0, 1)")));
                    }
                }
                if !edge_weight.is_finite() {
                    return Err(Error::Parameter("edge weight must be finite".into()));
                }
                check_floor(*pd_floor)
            }
            GraphSpec::Banded {
                band_weights,
                pd_floor,
            } => {
                if band_weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Parameter("band weights must be finite".into()));
                }
                check_floor(*pd_floor)
            }
        }
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if floor > 0.0 && floor < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("positive-definiteness floor {floor} not in (0, 1)")))
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Shifts `Ω` by a multiple of the identity and rescales it to unit diagonal
/// so that its smallest eigenvalue is at least `floor` afterwards.
fn repair_positive_definite(mut omega: DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    let lambda_min = min_eigenvalue(&omega);
    if lambda_min <= floor {
        // Rescaling a unit diagonal of 1 + c maps λ_min + c to
        // (λ_min + c)/(1 + c); pick c so that lands just above the floor.
        let target = floor * (1.0 + 1e-6);
        let shift = (target - lambda_min) / (1.0 - target);
        for i in 0..p {
            omega[(i, i)] += shift;
        }
    }
    let scale: Vec<f64> = (0..p).map(|i| omega[(i, i)].sqrt().recip()).collect();
    let omega = DMatrix::from_fn(p, p, |i, j| omega[(i, j)] * scale[i] * scale[j]);
    let omega = (&omega + omega.transpose()) * 0.5;
    let lambda_min = min_eigenvalue(&omega);
    if lambda_min < floor {
        return Err(Error::Numeric(format!(
            "precision matrix repair left smallest eigenvalue {lambda_min:.3e} below {floor}"
        )));
    }
    Ok(omega)
}

/// Builds `(Ω_E, Σ_E = Ω_E⁻¹)` for the requested graph.
pub fn build_precision<R: Rng + ?Sized>(
    spec: &GraphSpec,
    p: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if p < 2 {
        return Err(Error::Parameter(format!("precision matrix needs p >= 2, got {p}")));
    }
    spec.validate()?;
    let omega = match spec {
        GraphSpec::Identity => return Ok((DMatrix::identity(p, p), DMatrix::identity(p, p))),
        GraphSpec::ErdosRenyi {
            edge_prob,
            edge_weight,
            pd_floor,
        } => {
            let prob = edge_prob.unwrap_or((4.0 / p as f64).min(1.0));
            let mut omega = DMatrix::identity(p, p);
            for j in 0..p {
                for k in (j + 1)..p {
                    if rng.random::<f64>() < prob {
                        omega[(j, k)] = *edge_weight;
                        omega[(k, j)] = *edge_weight;
                    }
                }
            }
            repair_positive_definite(omega, *pd_floor)?
        }
        GraphSpec::Banded {
            band_weights,
            pd_floor,
        } => {
            let omega = DMatrix::from_fn(p, p, |i, j| {
                let lag = i.abs_diff(j);
                match lag {
                    0 => 1.0,
                    l if l <= band_weights.len() => band_weights[l - 1],
                    _ => 0.0,
                }
            });
            repair_positive_definite(omega, *pd_floor)?
        }
    };
    let sigma = omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("precision matrix is not positive definite".into()))?
        .inverse();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok((omega, sigma))
}

/// Symmetric square root of a positive semi-definite matrix.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut v = eig.eigenvectors.clone();
    for (mut col, l) in v.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= l.max(0.0).sqrt();
    }
    &v * eig.eigenvectors.transpose()
}

/// Places `s0` signals at uniformly chosen coordinates with magnitude
/// `1.2^(−ν) √(8 ω_jj log(p)/n)` and a uniformly random sign.
pub fn place_signals<R: Rng + ?Sized>(
    p: usize,
    s0: usize,
    nu: f64,
    omega_diag: &[f64],
    log_p_over_n: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if s0 > p {
        return Err(Error::Parameter(format!("cannot place {s0} signals among {p} coordinates")));
    }
    if !(nu >= 0.0) {
        return Err(Error::Parameter(format!("signal exponent nu must be >= 0, got {nu}")));
    }
    if omega_diag.len() != p {
        return Err(Error::Shape(format!("{} precision diagonals for p = {p}", omega_diag.len())));
    }
    let attenuation = 1.2f64.powf(-nu);
    let mut beta = DVector::zeros(p);
    for j in index::sample(rng, p, s0) {
        let magnitude = attenuation * (8.0 * omega_diag[j] * log_p_over_n).sqrt();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[j] = sign * magnitude;
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s0: usize,
    /// Mean of the confounder effects `φ`.
    pub mu: f64,
    /// Signal attenuation exponent.
    pub nu: f64,
    pub graph: GraphSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 300,
            p: 400,
            q: 3,
            s0: 20,
            mu: 3.0,
            nu: 3.0,
            graph: GraphSpec::Identity,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 2 {
            return Err(Error::Parameter(format!("need n, p >= 2, got n = {}, p = {}", self.n, self.p)));
        }
        if self.q >= self.n.min(self.p) {
            return Err(Error::Parameter(format!("q = {} must be below min(n, p)", self.q)));
        }
        if self.s0 > self.p {
            return Err(Error::Parameter(format!("s0 = {} exceeds p = {}", self.s0, self.p)));
        }
        if !self.mu.is_finite() || !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Parameter("mu must be finite and nu finite and >= 0".into()));
        }
        self.graph.validate()
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: DVector<f64>,
    /// `n × q` confounders.
    pub h: DMatrix<f64>,
    /// `q × p` loadings.
    pub psi: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl GroundTruth {
    pub fn omega_diag(&self) -> Vec<f64> {
        self.omega.diagonal().iter().copied().collect()
    }

    /// `Σ_X = ΨᵀΨ + Σ_E`.
    pub fn design_covariance(&self) -> DMatrix<f64> {
        self.psi.tr_mul(&self.psi) + &self.sigma
    }

    pub fn records(&self, names: &[String]) -> Vec<TruthRecord> {
        names
            .iter()
            .enumerate()
            .map(|(j, name)| TruthRecord {
                coordinate: name.clone(),
                beta: self.beta[j],
                omega_jj: self.omega[(j, j)],
            })
            .collect()
    }
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Draws one dataset. Every source of randomness uses its own stream of
/// `config.seed`.
pub fn generate_dataset(config: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let SimConfig { n, p, q, s0, .. } = *config;
    let seed = config.seed;

    let (omega, sigma) = build_precision(&config.graph, p, &mut stream_rng(seed, Stream::Graph))?;

    let h = gaussian_matrix(n, q, &mut stream_rng(seed, Stream::Confounders));
    let mut rng = stream_rng(seed, Stream::Loadings);
    let psi = DMatrix::from_fn(q, p, |_, _| rng.random_range(-2.0..2.0));
    let effect = Normal::new(config.mu, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::ConfounderEffects);
    let phi = DVector::from_fn(q, |_, _| effect.sample(&mut rng));

    let z = gaussian_matrix(n, p, &mut stream_rng(seed, Stream::Idiosyncratic));
    let e = match config.graph {
        GraphSpec::Identity => z,
        _ => z * symmetric_sqrt(&sigma),
    };
    let x = &h * &psi + e;

    let omega_diag: Vec<f64> = omega.diagonal().iter().copied().collect();
    let log_p_over_n = (p as f64).ln() / n as f64;
    let beta = place_signals(
        p,
        s0,
        config.nu,
        &omega_diag,
        log_p_over_n,
        &mut stream_rng(seed, Stream::Signals),
    )?;

    let mut rng = stream_rng(seed, Stream::Noise);
    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + &h * &phi + xi;

    let dataset = Dataset::with_default_names(x, y)?;
    let truth = GroundTruth {
        beta,
        h,
        psi,
        phi,
        omega,
        sigma,
    };
    Ok((dataset, truth))
}
