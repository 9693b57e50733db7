use dcdb::debias::{
    debias_coordinate, nodewise_residual, run_pipeline, FactorChoice, InitialTransform,
    PipelineConfig,
};
use dcdb::regression::CvConfig;
use dcdb::simgen::{generate_dataset, SimConfig};
use nalgebra::DVector;

fn unconfounded(n: usize, p: usize, s0: usize, seed: u64) -> SimConfig {
    SimConfig {
        n,
        p,
        q: 0,
        s0,
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn statistics_are_scale_invariant() {
    let (data, _) = generate_dataset(&SimConfig {
        n: 120,
        p: 80,
        s0: 5,
        seed: 3,
        ..SimConfig::default()
    })
    .unwrap();
    let config = PipelineConfig::default();
    let base = run_pipeline(&data.x, &data.y, &config).unwrap();
    // A power of two keeps every intermediate product exact.
    let scaled_y = &data.y * 4.0;
    let scaled = run_pipeline(&data.x, &scaled_y, &config).unwrap();
    let m = &base.metadata;
    assert!((scaled.metadata.lambda - 4.0 * m.lambda).abs() <= 1e-9 * m.lambda);
    assert!((scaled.metadata.sigma_xi_hat - 4.0 * m.sigma_xi_hat).abs() <= 1e-8 * m.sigma_xi_hat);
    assert_eq!(scaled.metadata.lambda_j, m.lambda_j);
    for (a, b) in base.inference.statistics.iter().zip(scaled.inference.statistics.iter()) {
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn tau_tracks_precision_diagonal() {
    let (data, truth) = generate_dataset(&unconfounded(600, 400, 20, 1)).unwrap();
    let out = run_pipeline(&data.x, &data.y, &PipelineConfig::default()).unwrap();
    let omega = truth.omega_diag();
    let mut gaps: Vec<f64> = out
        .inference
        .tau
        .iter()
        .zip(&omega)
        .map(|(t, w)| (t * t - w).abs())
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    assert!(median <= 0.2, "median |tau^2 - omega| = {median}");
}

#[test]
fn small_penalty_debiasing_recovers_least_squares() {
    // With a vanishing node-wise penalty z_j is the least-squares residual of
    // x_j on the other columns, so β̄_j is the OLS coefficient.
    let (data, _) = generate_dataset(&unconfounded(200, 5, 2, 9)).unwrap();
    let (x, y) = (&data.x, &data.y);
    let xtx = x.tr_mul(x);
    let inv = xtx.clone().try_inverse().unwrap();
    let ols = &inv * x.tr_mul(y);
    let resid = y - x * &ols;
    let sigma = (resid.norm_squared() / (200.0 - 5.0)).sqrt();
    let beta_hat = DVector::zeros(5);
    for j in 0..5 {
        let nw = nodewise_residual(x, j, 1e-9).unwrap();
        let bar = debias_coordinate(&beta_hat, x, y, &nw).unwrap();
        let se = sigma * inv[(j, j)].sqrt();
        assert!((bar - ols[j]).abs() <= 3.0 * se, "coordinate {j}: {bar} vs {}", ols[j]);
        assert!((bar - ols[j]).abs() <= 1e-4 * (1.0 + ols[j].abs()));
    }
}

#[test]
fn signals_stand_out_under_confounding() {
    let mut total = 0.0;
    let reps = 5;
    for seed in 0..reps {
        let (data, truth) = generate_dataset(&SimConfig {
            seed,
            ..SimConfig::default()
        })
        .unwrap();
        let config = PipelineConfig {
            cv: CvConfig {
                seed,
                ..CvConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&data.x, &data.y, &config).unwrap();
        let signals: Vec<usize> = (0..data.p()).filter(|&j| truth.beta[j] != 0.0).collect();
        total += signals
            .iter()
            .map(|&j| out.inference.statistics[j].abs())
            .sum::<f64>()
            / signals.len() as f64;
    }
    let mean = total / reps as f64;
    assert!(mean >= 3.0, "mean |T| at signals = {mean}");
}

#[test]
fn standard_baseline_is_plain_debiased_lasso() {
    let (data, _) = generate_dataset(&unconfounded(100, 40, 4, 2)).unwrap();
    let standard = PipelineConfig {
        factors: FactorChoice::Fixed(0),
        initial: InitialTransform::Identity,
        ..PipelineConfig::default()
    };
    let dc_zero = PipelineConfig {
        factors: FactorChoice::Fixed(0),
        initial: InitialTransform::Decorrelate,
        ..PipelineConfig::default()
    };
    let a = run_pipeline(&data.x, &data.y, &standard).unwrap();
    let b = run_pipeline(&data.x, &data.y, &dc_zero).unwrap();
    assert_eq!(a.inference.statistics, b.inference.statistics);
    assert_eq!(a.metadata.q_hat, 0);
}

#[test]
fn degenerate_column_is_reported_with_its_coordinate() {
    let (data, _) = generate_dataset(&unconfounded(30, 4, 1, 6)).unwrap();
    let mut x = data.x.clone();
    x.set_column(2, &DVector::zeros(30));
    let err = run_pipeline(&x, &data.y, &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.class(), dcdb::ErrorClass::Data, "{err}");
    assert!(err.to_string().contains("coordinate 3"), "{err}");
}
