use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use dcdb::bench::{run_grid, write_agg_csv, write_raw_csv, MethodName};
use dcdb::config::{load_config, ConfigFile};
use dcdb::data::{
    format_f64, load_csv_dataset, load_truth_csv, standardize_columns, write_dataset_csv,
    write_truth_csv,
};
use dcdb::debias::run_pipeline;
use dcdb::error::ResultExt;
use dcdb::mtp::{data_driven_threshold, evaluate, SignedSupport};
use dcdb::simgen::generate_dataset;
use dcdb::{Error, Result};

use crate::{AnalyzeArgs, BenchmarkArgs, SimulateArgs};

fn create_output(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_output<F>(dir: &Path, name: &str, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut out = create_output(dir, name)?;
    write(&mut out).with_context(|| format!("writing {name}"))?;
    out.flush().with_context(|| format!("writing {name}"))?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let mut sim = config.simulate.sim_config()?;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    let (dataset, truth) = generate_dataset(&sim)?;
    let records = truth.records(&dataset.names);
    write_output(&args.out, "data.csv", |w| write_dataset_csv(&dataset, w))?;
    write_output(&args.out, "truth.csv", |w| write_truth_csv(&records, w))?;
    println!("n: {}", dataset.n());
    println!("p: {}", dataset.p());
    println!("signals: {}", truth.beta.iter().filter(|b| **b != 0.0).count());
    println!("seed: {}", sim.seed);
    Ok(())
}

fn analyze_config(args: &AnalyzeArgs) -> Result<ConfigFile> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    let a = &mut config.analyze;
    if let Some(m) = &args.method {
        a.method = m.parse::<MethodName>()?;
    }
    if let Some(alpha) = args.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!("--alpha must lie in (0, 1), got {alpha}")));
        }
        a.alpha = alpha;
    }
    if args.q.is_some() {
        a.q = args.q;
    }
    if let Some(seed) = args.seed {
        a.seed = seed;
    }
    Ok(config)
}

fn signed_truth(path: &Path, names: &[String]) -> Result<SignedSupport> {
    let records = load_truth_csv(path)?;
    let by_name: HashMap<&str, f64> = records.iter().map(|r| (r.coordinate.as_str(), r.beta)).collect();
    let mut beta = Vec::with_capacity(names.len());
    for name in names {
        match by_name.get(name.as_str()) {
            Some(b) => beta.push(*b),
            None => {
                return Err(Error::Input(format!(
                    "truth file {} has no entry for `{name}`",
                    path.display()
                )))
            }
        }
    }
    if records.len() > names.len() {
        log::warn!(
            "truth file lists {} coordinates not present in the analyzed data",
            records.len() - names.len()
        );
    }
    Ok(SignedSupport::from_coefficients(&beta))
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let config = analyze_config(args)?;
    let (raw, report) = load_csv_dataset(&args.data, &args.response)?;
    if report.dropped_rows > 0 {
        log::warn!("dropped {} rows with a missing response", report.dropped_rows);
    }
    if !report.duplicate_columns.is_empty() {
        log::warn!("dropped duplicate columns: {}", report.duplicate_columns.join(", "));
    }
    if !report.zero_columns.is_empty() {
        log::warn!("dropped all-zero columns: {}", report.zero_columns.join(", "));
    }
    let dataset = standardize_columns(&raw)?;
    let truth = match &args.truth {
        Some(path) => Some(signed_truth(path, &dataset.names)?),
        None => None,
    };

    let pipeline = config.analyze_pipeline();
    let out = run_pipeline(&dataset.x, &dataset.y, &pipeline)?;
    let stats = out.inference.statistics.as_slice();
    let decision = data_driven_threshold(stats, config.analyze.alpha)?;
    let metrics = truth.as_ref().map(|t| evaluate(&decision, t));

    write_output(&args.out, "report.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["coordinate", "beta_bar", "tau", "T", "rejected", "sign"])?;
        for (j, name) in dataset.names.iter().enumerate() {
            let rejected = decision.is_rejected(j);
            let sign = match (rejected, stats[j] > 0.0) {
                (false, _) => "0",
                (true, true) => "+",
                (true, false) => "-",
            };
            csv.write_record([
                name.clone(),
                format_f64(out.inference.beta_bar[j]),
                format_f64(out.inference.tau[j]),
                format_f64(stats[j]),
                rejected.to_string(),
                sign.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let meta = &out.metadata;
    println!("method: {}", config.analyze.method);
    println!("n: {}", dataset.n());
    println!("p: {}", dataset.p());
    println!("q_hat: {}", meta.q_hat);
    println!("lambda: {}", format_f64(meta.lambda));
    println!("lambda_j: {}", format_f64(meta.lambda_j.first().copied().unwrap_or(f64::NAN)));
    println!("sigma_xi_hat: {}", format_f64(meta.sigma_xi_hat));
    println!("variance_fallback: {}", meta.variance_fallback);
    println!("t_hat: {}", format_f64(decision.t_hat));
    println!("fallback: {}", decision.fallback_used);
    println!("rejections: {}", decision.rejected.len());
    if let Some(m) = metrics {
        println!("fdp: {}", format_f64(m.fdp));
        println!("power: {}", format_f64(m.power));
        println!("sign_errors: {}", m.sign_errors);
    }
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.benchmark.base_seed = seed;
    }
    let threads = args.threads.or(config.benchmark.threads);
    if threads == Some(0) {
        return Err(Error::Parameter("--threads must be at least 1".into()));
    }
    let grid = config.experiment_grid()?;
    let results = run_grid(&grid, threads)?;
    write_output(&args.out, "results_raw.csv", |w| write_raw_csv(&results.rows, w))?;
    write_output(&args.out, "results_agg.csv", |w| write_agg_csv(&results.aggregates, w))?;
    for agg in &results.aggregates {
        println!(
            "{} {}={}: fdr {:.4} power {:.4} ({} ok, {} failed)",
            agg.method,
            grid.sweep.as_str(),
            agg.swept_value,
            agg.fdr,
            agg.power_mean,
            agg.reps_ok,
            agg.reps_failed
        );
    }
    Ok(())
}
