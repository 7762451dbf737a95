use super::*;
use crate::data::Partition;
use crate::models::{fit_erm, ModelSpec};
use crate::predictive::{interval, log_score};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sine_model() -> (FittedModel<f64>, Dataset<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let y: Vec<f64> =
        rows.iter().map(|r| (5.0 * r[0]).sin() + r[1] * r[1] + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let d = Dataset::from_rows(&rows, &y, Partition::Train).unwrap();
    (fit_erm(&ModelSpec::mlp(8), &d, Seed(1)).unwrap(), d)
}

fn variance(xs: &[f64]) -> f64 {
    crate::data::sample_sd(xs).powi(2)
}

#[test]
fn zero_rate_reproduces_prediction() {
    let (m, _) = sine_model();
    let cfg = DropoutConfig { p: 0.0, passes: 20, seed: Seed(0) };
    for x in [[0.1, 0.9], [0.5, 0.5], [0.99, 0.01]] {
        let samples = dropout_samples(&m, &x, &cfg).unwrap();
        let pred = m.predict(&x).unwrap();
        assert!(samples.iter().all(|&s| s == pred));
        assert_eq!(dropout_ensemble(&m, &x, &cfg).unwrap().sd(), 0.0);
    }
}

#[test]
fn linear_models_unsupported() {
    let (_, d) = sine_model();
    let lin = fit_erm(&ModelSpec::linear(true), &d, Seed(0)).unwrap();
    let err = masked_forward(&lin, &[0.2, 0.3], 0.5, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(err, Err(Error::UnsupportedModel(_))));
}

#[test]
fn config_validation() {
    let (m, _) = sine_model();
    for (p, passes) in [(1.0, 10), (-0.1, 10), (0.5, 0), (f64::NAN, 10)] {
        assert!(dropout_samples(&m, &[0.2, 0.3], &DropoutConfig { p, passes, seed: Seed(0) }).is_err());
    }
    assert!(masked_forward(&m, &[0.2], 0.1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn deterministic_and_thread_independent() {
    let (m, d) = sine_model();
    let cfg = DropoutConfig { p: 0.3, passes: 200, seed: Seed(5) };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| dropout_ensembles_for(&m, &d.clone().with_role(Partition::Test), &cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn scaled_masks_are_unbiased() {
    // E[m/(1 − p)] = 1: the mean mask-scale over many draws is near one
    let p = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200_000;
    let keep = 1.0 / (1.0 - p);
    let mean = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).sum::<f64>() / n as f64;
    let sd = (keep * keep * (1.0 - p) - 1.0).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * sd / (n as f64).sqrt());
}

#[test]
fn variance_grows_with_rate() {
    let (m, _) = sine_model();
    let x = [0.4, 0.7];
    let var = |p| variance(&dropout_samples(&m, &x, &DropoutConfig { p, passes: 10_000, seed: Seed(2) }).unwrap());
    let (v1, v3, v5) = (var(0.1), var(0.3), var(0.5));
    assert!(v1 > 0.0 && v1 < v3 && v3 < v5, "{v1} {v3} {v5}");
}

#[test]
fn ensemble_feeds_predictive_metrics() {
    let (m, _) = sine_model();
    let e = dropout_ensemble(&m, &[0.3, 0.3], &DropoutConfig { p: 0.2, passes: 300, seed: Seed(4) }).unwrap();
    assert_eq!(e.sigma_hat(), m.sigma_hat());
    let iv = interval(&e, 0.9, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(iv.lo < iv.hi);
    assert!(log_score(&e, m.predict(&[0.3, 0.3]).unwrap()).is_finite());
}
