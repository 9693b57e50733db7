//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failures are reported but only
//! turn into a nonzero exit status when `ACCEPTANCE_STRICT` is set, so the
//! Monte Carlo criteria never hide the rest of the test run.

use std::process::ExitCode;
use std::time::Instant;

use dcdb::bench::{run_grid, write_agg_csv, ExperimentGrid, MethodName, MethodSpec, SweepParam};
use dcdb::debias::{run_pipeline, FactorChoice, InitialTransform, PipelineConfig, PipelineOutput};
use dcdb::mtp::{data_driven_threshold, evaluate, gaussian_tail, search_limit, SignedSupport};
use dcdb::regression::{solve_lasso, LassoProblem, SolverOptions};
use dcdb::simgen::{generate_dataset, GraphSpec, SimConfig};
use dcdb::spectral::{compute_svd, decorrelating_transform, estimate_num_factors, trim_transform};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const ALPHA: f64 = 0.1;
const REPS: u64 = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Converged-fit KKT bookkeeping across every pipeline run in the suite.
#[derive(Default)]
struct KktTally {
    fits: usize,
    converged: usize,
    violations: usize,
    worst_ratio: f64,
}

impl KktTally {
    fn record(&mut self, violation: f64, bound: f64, converged: bool) {
        self.fits += 1;
        if !converged {
            return;
        }
        self.converged += 1;
        self.worst_ratio = self.worst_ratio.max(violation / bound);
        if violation > bound {
            self.violations += 1;
        }
    }

    fn absorb(&mut self, out: &PipelineOutput) {
        let init = &out.initial;
        self.record(init.kkt_violation, init.kkt_bound, init.converged);
        for nw in &out.nodewise {
            self.record(nw.kkt_violation, nw.kkt_bound, nw.converged);
        }
    }
}

struct Rep {
    fdp: f64,
    power: f64,
    out: PipelineOutput,
}

fn sim(seed: u64) -> SimConfig {
    SimConfig {
        n: 300,
        p: 400,
        q: 3,
        s0: 20,
        seed,
        ..SimConfig::default()
    }
}

fn replicate(method: MethodName, config: &SimConfig) -> Rep {
    let (data, truth) = generate_dataset(config).expect("simulation");
    let pipeline = MethodSpec::new(method).pipeline_config(config.seed);
    let out = run_pipeline(&data.x, &data.y, &pipeline).expect("pipeline");
    let decision = data_driven_threshold(out.inference.statistics.as_slice(), ALPHA).expect("threshold");
    let m = evaluate(&decision, &SignedSupport::from_coefficients(truth.beta.as_slice()));
    Rep {
        fdp: m.fdp,
        power: m.power,
        out,
    }
}

/// Runs `REPS` replications with seeds `0..REPS`; returns (FDR, mean power).
fn monte_carlo(method: MethodName, make: impl Fn(u64) -> SimConfig + Sync, kkt: &mut KktTally) -> (f64, f64) {
    let reps: Vec<Rep> = (0..REPS).into_par_iter().map(|s| replicate(method, &make(s))).collect();
    for r in &reps {
        kkt.absorb(&r.out);
    }
    let k = reps.len() as f64;
    (
        reps.iter().map(|r| r.fdp).sum::<f64>() / k,
        reps.iter().map(|r| r.power).sum::<f64>() / k,
    )
}

fn c1(kkt: &mut KktTally) -> (Outcome, f64) {
    let (fdr, power) = monte_carlo(MethodName::DecorrelateDebiasDc, |s| SimConfig { nu: 3.0, ..sim(s) }, kkt);
    let o = outcome(fdr <= 0.15, format!("FDR {fdr:.4} at nu=3 (need <= 0.15), power {power:.4}"));
    (o, power)
}

fn c2(power3: f64, kkt: &mut KktTally) -> Outcome {
    let dc = MethodName::DecorrelateDebiasDc;
    let (fdr0, power0) = monte_carlo(dc, |s| SimConfig { nu: 0.0, ..sim(s) }, kkt);
    let (fdr5, power5) = monte_carlo(dc, |s| SimConfig { nu: 5.0, ..sim(s) }, kkt);
    outcome(
        power0 >= 0.90 && power3 > power5,
        format!(
            "power {power0:.4} at nu=0 (need >= 0.90), {power3:.4} at nu=3 vs {power5:.4} at nu=5; \
             FDR {fdr0:.4} / {fdr5:.4} at nu=0 / 5"
        ),
    )
}

fn c3(kkt: &mut KktTally) -> Outcome {
    let graphs = [GraphSpec::Identity, GraphSpec::erdos_renyi(), GraphSpec::banded()];
    let mut pass = true;
    let mut parts = Vec::new();
    for graph in graphs {
        let label = graph.label();
        let (fdr, _) = monte_carlo(
            MethodName::StandardDebias,
            |s| SimConfig {
                graph: graph.clone(),
                ..sim(s)
            },
            kkt,
        );
        pass &= fdr >= ALPHA + 0.05;
        parts.push(format!("{label} {fdr:.4}"));
    }
    outcome(pass, format!("standard-debias FDR {} (need >= 0.15 on each)", parts.join(", ")))
}

fn c4(kkt: &mut KktTally) -> Outcome {
    let outs: Vec<PipelineOutput> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let config = SimConfig {
                n: 400,
                p: 100,
                q: 0,
                s0: 0,
                seed,
                ..SimConfig::default()
            };
            let (data, _) = generate_dataset(&config).expect("simulation");
            let pipeline = MethodSpec::new(MethodName::DecorrelateDebiasDc).pipeline_config(seed);
            run_pipeline(&data.x, &data.y, &pipeline).expect("pipeline")
        })
        .collect();
    let mut exceed = 0usize;
    let mut total = 0usize;
    for out in &outs {
        kkt.absorb(out);
        total += out.inference.statistics.len();
        exceed += out.inference.statistics.iter().filter(|t| t.abs() > 1.96).count();
    }
    let frac = exceed as f64 / total as f64;
    outcome(
        (0.03..=0.07).contains(&frac),
        format!("{exceed}/{total} = {frac:.4} of null |T| exceed 1.96 (need [0.03, 0.07])"),
    )
}

/// Grid oracle: first of `points + 1` equally spaced thresholds on
/// `[0, upper]` meeting the estimated FDP bound, else the fallback.
fn grid_threshold(stats: &[f64], alpha: f64, upper: f64, points: usize) -> (f64, f64) {
    let p = stats.len();
    let mut abs: Vec<f64> = stats.iter().map(|t| t.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let step = upper / points as f64;
    for k in 0..=points {
        let t = k as f64 * step;
        let r = p - abs.partition_point(|v| *v < t);
        if p as f64 * gaussian_tail(t).unwrap() / r.max(1) as f64 <= alpha {
            return (t, step);
        }
    }
    ((2.0 * (p as f64).ln()).sqrt(), step)
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut set_mismatch = 0;
    let mut threshold_mismatch = 0;
    for _ in 0..1000 {
        let p = rng.random_range(1..=500usize);
        let signals = rng.random_range(0..=p / 4);
        let shift: f64 = rng.random_range(0.0..6.0);
        let stats: Vec<f64> = (0..p)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                if j < signals {
                    z + shift * if rng.random::<bool>() { 1.0 } else { -1.0 }
                } else {
                    z
                }
            })
            .collect();
        let alpha = rng.random_range(0.01..0.5);
        let decision = data_driven_threshold(&stats, alpha).unwrap();
        let limit = search_limit(p);
        let upper = if limit.is_finite() { limit } else { 10.0 };
        let (t_grid, step) = grid_threshold(&stats, alpha, upper, 100_000);
        let grid_set: Vec<usize> = (0..p).filter(|&j| stats[j].abs() >= t_grid).collect();
        if grid_set != decision.rejected {
            set_mismatch += 1;
        }
        if (t_grid - decision.t_hat).abs() > step * (1.0 + 1e-9) {
            threshold_mismatch += 1;
        }
    }
    outcome(
        set_mismatch == 0 && threshold_mismatch == 0,
        format!("1000 vectors: {set_mismatch} rejection-set and {threshold_mismatch} threshold mismatches"),
    )
}

fn c6(kkt: &KktTally) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(20..80usize);
        let p = rng.random_range(1..6usize);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let problem = LassoProblem::with_column_weights(&x, &y, 0.0).unwrap();
        let fit = solve_lasso(&problem, &SolverOptions::default()).unwrap();
        let ols = x.tr_mul(&x).cholesky().expect("full rank").solve(&x.tr_mul(&y));
        let scale = 1.0 + ols.amax();
        worst = worst.max((&fit.coefficients - &ols).amax() / scale);
    }
    outcome(
        kkt.violations == 0 && worst <= 1e-8,
        format!(
            "{} of {} converged fits ({} total) exceed the KKT bound, worst ratio {:.3e}; \
             OLS match at lambda=0 worst {:.2e} (need <= 1e-8)",
            kkt.violations, kkt.converged, kkt.fits, kkt.worst_ratio, worst
        ),
    )
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_dc = 0.0f64;
    let mut worst_trim = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(5..60usize);
        let p = rng.random_range(5..60usize);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let svd = compute_svd(&x).unwrap();
        let lambda = svd.singular_values().clone();
        let r = lambda.len();

        let q = rng.random_range(0..r);
        let fx = decorrelating_transform(&svd, q).unwrap().apply(&x).unwrap();
        let got = compute_svd(&fx).unwrap().singular_values().clone();
        for i in 0..r - q {
            let want = lambda[q + i];
            worst_dc = worst_dc.max((got[i] - want).abs() / want.max(1e-12 * lambda[0]));
        }

        let rho = rng.random_range(0.05..0.95);
        let Ok(trim) = trim_transform(&svd, rho, None) else { continue };
        let cap = match trim.kind() {
            dcdb::spectral::TransformKind::Trim { k, .. } => lambda[k - 1],
            _ => unreachable!(),
        };
        let got = compute_svd(&trim.apply(&x).unwrap()).unwrap().singular_values().clone();
        for i in 0..r {
            let want = lambda[i].min(cap);
            worst_trim = worst_trim.max((got[i] - want).abs() / want.max(1e-12 * lambda[0]));
        }
    }
    outcome(
        worst_dc <= 1e-6 && worst_trim <= 1e-6,
        format!("100 matrices: worst relative error {worst_dc:.2e} (decorrelate), {worst_trim:.2e} (trim)"),
    )
}

fn c8(kkt: &mut KktTally) -> Outcome {
    let outs: Vec<PipelineOutput> = (0..REPS)
        .into_par_iter()
        .map(|seed| {
            let config = SimConfig {
                n: 500,
                p: 50,
                q: 0,
                s0: 5,
                seed,
                ..SimConfig::default()
            };
            let (data, _) = generate_dataset(&config).expect("simulation");
            let pipeline = PipelineConfig {
                factors: FactorChoice::Fixed(0),
                initial: InitialTransform::Decorrelate,
                cv: dcdb::regression::CvConfig {
                    seed,
                    ..Default::default()
                },
                ..PipelineConfig::default()
            };
            run_pipeline(&data.x, &data.y, &pipeline).expect("pipeline")
        })
        .collect();
    let mut within = 0;
    for out in &outs {
        kkt.absorb(out);
        let s2 = out.metadata.sigma_xi_hat.powi(2);
        if (s2 - 1.0).abs() <= 0.15 {
            within += 1;
        }
    }
    outcome(
        within >= 90,
        format!("sigma_xi_hat^2 within 15% of 1 in {within}/100 replications (need >= 90)"),
    )
}

fn grid_for_determinism() -> ExperimentGrid {
    ExperimentGrid {
        base: SimConfig {
            n: 80,
            p: 60,
            q: 2,
            s0: 5,
            ..SimConfig::default()
        },
        sweep: SweepParam::Nu,
        values: vec![0.0, 2.0],
        replications: 4,
        alpha: ALPHA,
        methods: MethodName::ALL.iter().map(|m| MethodSpec::new(*m)).collect(),
        base_seed: 11,
    }
}

fn c9() -> Outcome {
    let grid = grid_for_determinism();
    let render = |threads| {
        let results = run_grid(&grid, Some(threads)).expect("grid");
        let mut bytes = Vec::new();
        write_agg_csv(&results.aggregates, &mut bytes).expect("csv");
        bytes
    };
    let one = render(1);
    let eight = render(8);
    outcome(
        one == eight,
        format!("results_agg.csv with 1 and 8 threads: {} vs {} bytes, identical = {}", one.len(), eight.len(), one == eight),
    )
}

fn c10() -> Outcome {
    let hits = (0..REPS)
        .into_par_iter()
        .filter(|&seed| {
            let (data, _) = generate_dataset(&sim(seed)).expect("simulation");
            let svd = compute_svd(&data.x).expect("svd");
            estimate_num_factors(&svd, 20).expect("estimate") == 3
        })
        .count();
    outcome(hits >= 95, format!("q recovered in {hits}/100 seeds (need >= 95)"))
}

fn timed<T>(id: usize, f: impl FnOnce() -> T) -> (T, f64) {
    eprintln!("acceptance: running C{id}");
    let start = Instant::now();
    let value = f();
    (value, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // Tolerate being invoked with libtest arguments.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some();
    // Comma-separated criterion numbers; everything runs when unset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|ids| ids.contains(&id));

    let mut kkt = KktTally::default();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut power3 = None;
    if wanted(1) || wanted(2) {
        let ((o, p3), s) = timed(1, || c1(&mut kkt));
        power3 = Some(p3);
        if wanted(1) {
            results.push((1, "fdr control", o, s));
        }
    }
    if let (true, Some(p3)) = (wanted(2), power3) {
        let (o, s) = timed(2, || c2(p3, &mut kkt));
        results.push((2, "power sanity", o, s));
    }
    if wanted(3) {
        let (o, s) = timed(3, || c3(&mut kkt));
        results.push((3, "baseline inflation", o, s));
    }
    if wanted(4) {
        let (o, s) = timed(4, || c4(&mut kkt));
        results.push((4, "null calibration", o, s));
    }
    if wanted(5) {
        let (o, s) = timed(5, c5);
        results.push((5, "threshold oracle", o, s));
    }
    if wanted(8) {
        let (o, s) = timed(8, || c8(&mut kkt));
        results.push((8, "variance estimation", o, s));
    }
    // After the pipeline runs so the tally covers all of them.
    if wanted(6) {
        let (o, s) = timed(6, || c6(&kkt));
        results.push((6, "lasso kkt", o, s));
    }
    if wanted(7) {
        let (o, s) = timed(7, c7);
        results.push((7, "spectral invariants", o, s));
    }
    if wanted(9) {
        let (o, s) = timed(9, c9);
        results.push((9, "determinism", o, s));
    }
    if wanted(10) {
        let (o, s) = timed(10, c10);
        results.push((10, "factor recovery", o, s));
    }

    results.sort_by_key(|r| r.0);
    for (id, name, o, secs) in &results {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("C{id} {verdict} {name}: {} [{secs:.1}s]", o.detail);
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
