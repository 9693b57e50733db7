//! Simulation experiments: methods × swept settings × replications, with
//! per-replication rows and per-cell FDR and power aggregates.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::format_f64;
use crate::debias::{
    run_pipeline, FactorChoice, InitialTransform, PipelineConfig, DEFAULT_KAPPA, DEFAULT_K_MAX,
    DEFAULT_RHO,
};
use crate::error::{Error, Result};
use crate::mtp::{data_driven_threshold, evaluate, SignedSupport};
use crate::regression::CvConfig;
use crate::simgen::{generate_dataset, SimConfig};

pub const RAW_HEADER: [&str; 12] = [
    "method",
    "swept_param",
    "swept_value",
    "rep",
    "seed",
    "fdp",
    "power",
    "q_hat",
    "t_hat",
    "fallback",
    "sigma_xi_hat",
    "wall_time_ms",
];

pub const AGG_HEADER: [&str; 7] = [
    "method",
    "swept_value",
    "reps_ok",
    "fdr",
    "power_mean",
    "fdr_se",
    "power_se",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[serde(alias = "dc")]
    DecorrelateDebiasDc,
    #[serde(alias = "trim")]
    DecorrelateDebiasTrim,
    #[serde(alias = "standard")]
    StandardDebias,
}

impl MethodName {
    pub const ALL: [MethodName; 3] = [
        MethodName::DecorrelateDebiasDc,
        MethodName::DecorrelateDebiasTrim,
        MethodName::StandardDebias,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::DecorrelateDebiasDc => "decorrelate-debias-dc",
            MethodName::DecorrelateDebiasTrim => "decorrelate-debias-trim",
            MethodName::StandardDebias => "standard-debias",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decorrelate-debias-dc" | "dc" => Ok(MethodName::DecorrelateDebiasDc),
            "decorrelate-debias-trim" | "trim" => Ok(MethodName::DecorrelateDebiasTrim),
            "standard-debias" | "standard" => Ok(MethodName::StandardDebias),
            other => Err(Error::Parameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub name: MethodName,
    pub rho: f64,
    pub kappa: f64,
    pub k_max: usize,
    /// Cross-validation settings; the seed is replaced per replication.
    pub cv: CvConfig,
}

impl MethodSpec {
    pub fn new(name: MethodName) -> Self {
        MethodSpec {
            name,
            rho: DEFAULT_RHO,
            kappa: DEFAULT_KAPPA,
            k_max: DEFAULT_K_MAX,
            cv: CvConfig::default(),
        }
    }

    /// Pipeline settings for this method. The standard baseline uses no
    /// decorrelation and an untransformed initial fit.
    pub fn pipeline_config(&self, cv_seed: u64) -> PipelineConfig {
        let (factors, initial) = match self.name {
            MethodName::DecorrelateDebiasDc => (
                FactorChoice::Estimate { k_max: self.k_max },
                InitialTransform::Decorrelate,
            ),
            MethodName::DecorrelateDebiasTrim => (
                FactorChoice::Estimate { k_max: self.k_max },
                InitialTransform::Trim { rho: self.rho },
            ),
            MethodName::StandardDebias => (FactorChoice::Fixed(0), InitialTransform::Identity),
        };
        PipelineConfig {
            factors,
            initial,
            kappa: self.kappa,
            cv: CvConfig {
                seed: cv_seed,
                ..self.cv
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    P,
    S0,
    Q,
    Nu,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::P => "p",
            SweepParam::S0 => "s0",
            SweepParam::Q => "q",
            SweepParam::Nu => "nu",
        }
    }

    pub fn apply(&self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut config = base.clone();
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::Parameter(format!("{} must be a non-negative integer, got {value}", self.as_str())))
            }
        };
        match self {
            SweepParam::P => config.p = count()?,
            SweepParam::S0 => config.s0 = count()?,
            SweepParam::Q => config.q = count()?,
            SweepParam::Nu => config.nu = value,
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub base: SimConfig,
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub replications: usize,
    pub alpha: f64,
    pub methods: Vec<MethodSpec>,
    pub base_seed: u64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Parameter("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() || self.values.is_empty() {
            return Err(Error::Parameter("grid needs at least one method and one value".into()));
        }
        for &v in &self.values {
            self.sweep.apply(&self.base, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub fdp: f64,
    pub power: f64,
    pub q_hat: usize,
    pub t_hat: f64,
    pub fallback: bool,
    pub sigma_xi_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: MethodName,
    pub swept_param: SweepParam,
    pub swept_value: f64,
    pub rep: usize,
    pub seed: u64,
    /// `Err` holds the failure message of a replication that did not finish.
    pub outcome: std::result::Result<RowMetrics, String>,
    pub wall_time_ms: f64,
}

fn replicate(method: &MethodSpec, config: &SimConfig, alpha: f64) -> Result<RowMetrics> {
    let (dataset, truth) = generate_dataset(config)?;
    let out = run_pipeline(&dataset.x, &dataset.y, &method.pipeline_config(config.seed))?;
    let decision = data_driven_threshold(out.inference.statistics.as_slice(), alpha)?;
    let support = SignedSupport::from_coefficients(truth.beta.as_slice());
    let metrics = evaluate(&decision, &support);
    Ok(RowMetrics {
        fdp: metrics.fdp,
        power: metrics.power,
        q_hat: out.metadata.q_hat,
        t_hat: decision.t_hat,
        fallback: decision.fallback_used,
        sigma_xi_hat: out.metadata.sigma_xi_hat,
    })
}

/// Simulates one dataset from `config` (including its seed), runs the
/// method and thresholding, and scores the rejections. Failures are kept in
/// the row rather than returned.
pub fn run_replication(
    method: &MethodSpec,
    config: &SimConfig,
    alpha: f64,
    swept: (SweepParam, f64),
    rep: usize,
) -> ResultRow {
    let start = Instant::now();
    let outcome = replicate(method, config, alpha).map_err(|e| e.to_string());
    if let Err(msg) = &outcome {
        log::warn!("{} rep {rep} seed {}: {msg}", method.name, config.seed);
    }
    ResultRow {
        method: method.name,
        swept_param: swept.0,
        swept_value: swept.1,
        rep,
        seed: config.seed,
        outcome,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: MethodName,
    pub swept_value: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub fdr: f64,
    pub power_mean: f64,
    pub fdr_se: f64,
    pub power_se: f64,
}

#[derive(Debug, Clone)]
pub struct GridResults {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Averages the successful rows of each (method, value) cell, in grid order.
pub fn aggregate(grid: &ExperimentGrid, rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for method in &grid.methods {
        for &value in &grid.values {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method.name && r.swept_value.to_bits() == value.to_bits())
                .collect();
            let ok: Vec<&RowMetrics> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let fdp: Vec<f64> = ok.iter().map(|m| m.fdp).collect();
            let power: Vec<f64> = ok.iter().map(|m| m.power).collect();
            let (fdr, fdr_se) = mean_and_se(&fdp);
            let (power_mean, power_se) = mean_and_se(&power);
            out.push(AggregateRow {
                method: method.name,
                swept_value: value,
                reps_ok: ok.len(),
                reps_failed: cell.len() - ok.len(),
                fdr,
                power_mean,
                fdr_se,
                power_se,
            });
        }
    }
    out
}

/// Runs every (method, value, replication) cell on a pool of `threads`
/// workers (all cores when `None`). Replication `r` uses seed
/// `base_seed + r` for every method and value, so results do not depend on
/// scheduling.
pub fn run_grid(grid: &ExperimentGrid, threads: Option<usize>) -> Result<GridResults> {
    grid.validate()?;
    let mut tasks = Vec::new();
    for method in &grid.methods {
        for &value in &grid.values {
            let config = grid.sweep.apply(&grid.base, value)?;
            for rep in 0..grid.replications {
                let seed = grid.base_seed.wrapping_add(rep as u64);
                tasks.push((*method, SimConfig { seed, ..config.clone() }, value, rep));
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Parameter("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<ResultRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(method, config, value, rep)| {
                run_replication(method, config, grid.alpha, (grid.sweep, *value), *rep)
            })
            .collect()
    });
    let aggregates = aggregate(grid, &rows);
    Ok(GridResults { rows, aggregates })
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        format_f64(v)
    }
}

/// Writes `results_raw.csv`. Failed replications carry `NA` in every metric
/// column.
pub fn write_raw_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RAW_HEADER)?;
    for row in rows {
        let mut record = vec![
            row.method.to_string(),
            row.swept_param.as_str().to_string(),
            fmt_value(row.swept_value),
            row.rep.to_string(),
            row.seed.to_string(),
        ];
        match &row.outcome {
            Ok(m) => record.extend([
                format_f64(m.fdp),
                format_f64(m.power),
                m.q_hat.to_string(),
                format_f64(m.t_hat),
                m.fallback.to_string(),
                format_f64(m.sigma_xi_hat),
            ]),
            Err(_) => record.extend(std::iter::repeat_n("NA".to_string(), 6)),
        }
        record.push(format!("{:.3}", row.wall_time_ms));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_agg_csv<W: Write>(rows: &[AggregateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(AGG_HEADER)?;
    for row in rows {
        w.write_record([
            row.method.to_string(),
            fmt_value(row.swept_value),
            row.reps_ok.to_string(),
            format_f64(row.fdr),
            format_f64(row.power_mean),
            format_f64(row.fdr_se),
            format_f64(row.power_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}
