//! Run configuration files.
//!
//! A config is a TOML document with up to four sections. Unknown keys are
//! rejected and every value is validated on load.
//!
//! ```toml
//! [simulate]
//! n = 300
//! p = 400
//! q = 3
//! s0 = 20
//! graph = "identity"   # or "erdos-renyi", "banded"
//!
//! [pipeline]
//! rho = 0.3
//! kappa = 1.0
//! k_max = 20
//!
//! [benchmark]
//! sweep = "p"
//! values = [400, 600]
//! replications = 100
//! methods = ["decorrelate-debias-dc", "standard-debias"]
//!
//! [analyze]
//! method = "dc"
//! alpha = 0.1
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::bench::{ExperimentGrid, MethodName, MethodSpec, SweepParam};
use crate::debias::{FactorChoice, PipelineConfig, DEFAULT_KAPPA, DEFAULT_K_MAX, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::regression::{CvConfig, SolverOptions};
use crate::simgen::{GraphSpec, SimConfig, DEFAULT_BAND_WEIGHTS, DEFAULT_EDGE_WEIGHT, DEFAULT_PD_FLOOR};

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Identity,
    ErdosRenyi,
    Banded,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s0: usize,
    pub mu: f64,
    pub nu: f64,
    pub seed: u64,
    pub graph: GraphKind,
    /// Defaults to `4/p`.
    pub edge_prob: Option<f64>,
    pub edge_weight: f64,
    pub band_weights: Vec<f64>,
    pub pd_floor: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let base = SimConfig::default();
        SimulateSection {
            n: base.n,
            p: base.p,
            q: base.q,
            s0: base.s0,
            mu: base.mu,
            nu: base.nu,
            seed: base.seed,
            graph: GraphKind::Identity,
            edge_prob: None,
            edge_weight: DEFAULT_EDGE_WEIGHT,
            band_weights: DEFAULT_BAND_WEIGHTS.to_vec(),
            pd_floor: DEFAULT_PD_FLOOR,
        }
    }
}

impl SimulateSection {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let graph = match self.graph {
            GraphKind::Identity => GraphSpec::Identity,
            GraphKind::ErdosRenyi => GraphSpec::ErdosRenyi {
                edge_prob: self.edge_prob,
                edge_weight: self.edge_weight,
                pd_floor: self.pd_floor,
            },
            GraphKind::Banded => GraphSpec::Banded {
                band_weights: self.band_weights.clone(),
                pd_floor: self.pd_floor,
            },
        };
        let config = SimConfig {
            n: self.n,
            p: self.p,
            q: self.q,
            s0: self.s0,
            mu: self.mu,
            nu: self.nu,
            graph,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub rho: f64,
    pub kappa: f64,
    pub k_max: usize,
    pub cv_folds: usize,
    pub cv_grid_len: usize,
    pub cv_min_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let cv = CvConfig::default();
        PipelineSection {
            rho: DEFAULT_RHO,
            kappa: DEFAULT_KAPPA,
            k_max: DEFAULT_K_MAX,
            cv_folds: cv.folds,
            cv_grid_len: cv.grid_len,
            cv_min_ratio: cv.min_ratio,
            tol: cv.solver.tol,
            max_iter: cv.solver.max_iter,
        }
    }
}

impl PipelineSection {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("pipeline.rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("pipeline.kappa must be positive, got {}", self.kappa));
        }
        if self.k_max == 0 {
            return bad("pipeline.k_max must be at least 1".into());
        }
        if self.cv_folds < 2 {
            return bad(format!("pipeline.cv_folds must be at least 2, got {}", self.cv_folds));
        }
        if self.cv_grid_len == 0 {
            return bad("pipeline.cv_grid_len must be at least 1".into());
        }
        if !(self.cv_min_ratio > 0.0 && self.cv_min_ratio < 1.0) {
            return bad(format!("pipeline.cv_min_ratio must lie in (0, 1), got {}", self.cv_min_ratio));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("pipeline.tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("pipeline.max_iter must be at least 1".into());
        }
        Ok(())
    }

    pub fn method_spec(&self, name: MethodName) -> MethodSpec {
        MethodSpec {
            name,
            rho: self.rho,
            kappa: self.kappa,
            k_max: self.k_max,
            cv: CvConfig {
                folds: self.cv_folds,
                grid_len: self.cv_grid_len,
                min_ratio: self.cv_min_ratio,
                seed: 0,
                solver: SolverOptions {
                    tol: self.tol,
                    max_iter: self.max_iter,
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub replications: usize,
    pub alpha: f64,
    pub methods: Vec<MethodName>,
    pub base_seed: u64,
    pub threads: Option<usize>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            sweep: SweepParam::P,
            values: vec![400.0],
            replications: 100,
            alpha: DEFAULT_ALPHA,
            methods: MethodName::ALL.to_vec(),
            base_seed: 0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub method: MethodName,
    pub alpha: f64,
    /// Fixed factor count; estimated when absent.
    pub q: Option<usize>,
    pub seed: u64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            method: MethodName::DecorrelateDebiasDc,
            alpha: DEFAULT_ALPHA,
            q: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub simulate: SimulateSection,
    pub pipeline: PipelineSection,
    pub benchmark: BenchmarkSection,
    pub analyze: AnalyzeSection,
}

impl ConfigFile {
    pub fn experiment_grid(&self) -> Result<ExperimentGrid> {
        let b = &self.benchmark;
        let grid = ExperimentGrid {
            base: self.simulate.sim_config()?,
            sweep: b.sweep,
            values: b.values.clone(),
            replications: b.replications,
            alpha: b.alpha,
            methods: b.methods.iter().map(|m| self.pipeline.method_spec(*m)).collect(),
            base_seed: b.base_seed,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Pipeline settings for `analyze`. A fixed `q` replaces the factor
    /// estimate except for the standard baseline, which never decorrelates.
    pub fn analyze_pipeline(&self) -> PipelineConfig {
        let a = &self.analyze;
        let mut config = self.pipeline.method_spec(a.method).pipeline_config(a.seed);
        if let Some(q) = a.q {
            if a.method == MethodName::StandardDebias {
                log::warn!("fixed q = {q} ignored by the standard baseline");
            } else {
                config.factors = FactorChoice::Fixed(q);
            }
        }
        config
    }

    fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.simulate.sim_config()?;
        let b = &self.benchmark;
        if b.threads == Some(0) {
            return Err(Error::Config("benchmark.threads must be at least 1".into()));
        }
        if b.methods.is_empty() {
            return Err(Error::Config("benchmark.methods must not be empty".into()));
        }
        self.experiment_grid()?;
        let alpha = self.analyze.alpha;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("analyze.alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let config: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate().map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Context {
        context: format!("reading {}", path.display()),
        source: Box::new(e.into()),
    })?;
    parse_config(&text).map_err(|e| Error::Context {
        context: format!("config {}", path.display()),
        source: Box::new(e),
    })
}
