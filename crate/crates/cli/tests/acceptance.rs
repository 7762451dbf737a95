//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use confbb::baselines::dropout_samples;
use confbb::benchmarks::{
    default_noise_sd, generate_dataset, run_benchmark_detailed, test_scores_at, DEFAULT_WEIGHT_DECAY,
};
use confbb::bootstrap::{
    linearized_prediction, perturb_parameters, retrain_from, retrain_oracle, sample_dirichlet, InfluencePack,
};
use confbb::calibration::consistency_diagnostic;
use confbb::models::{fit_erm, hessian_matrix};
use confbb::predictive::{interval, log_score, PredictiveEnsemble as Ensemble};
use confbb::{
    BenchmarkFunction, Dataset, Domain, DropoutConfig, ExperimentConfig, GenericDataset, HessianMode, ModelSpec,
    Partition, Seed, WeightVector,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

struct Check {
    id: u8,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scalar_mean_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
    let train = GenericDataset::targets_only(&y, Partition::Train);
    let spec = ModelSpec::scalar_mean();
    let model = fit_erm(&spec, &train, Seed(0)).map_err(err)?;
    let pack = InfluencePack::from_model(&model);
    let mut worst = 0.0f64;
    for (a, alpha) in [0.5, 1.0, 5.0].into_iter().enumerate() {
        for b in 0..1000u64 {
            let w: WeightVector =
                sample_dirichlet(alpha, y.len(), &mut Seed(a as u64).stream(Domain::Dirichlet, b)).map_err(err)?;
            let approx = perturb_parameters(&pack, model.theta_hat(), &w).map_err(err)?;
            let exact = retrain_oracle(&spec, &train, &w, Seed(0)).map_err(err)?;
            let weighted_mean: f64 = w.as_slice().iter().zip(&y).map(|(wi, yi)| wi * yi).sum();
            worst = worst.max((approx.values() - exact.values()).amax());
            worst = worst.max((approx.values()[0] - weighted_mean).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max |IF - retrain| = {worst:.2e} over 3000 draws"))
}

fn quadratic_error_ratio() -> Outcome {
    let f = BenchmarkFunction::Hartmann3;
    let train: Dataset =
        generate_dataset(f, 50, default_noise_sd(f).map_err(err)?, Partition::Train, Seed(2)).map_err(err)?;
    let model = fit_erm(&ModelSpec::linear(true), &train, Seed(0)).map_err(err)?;
    let pack = InfluencePack::from_model(&model);
    let n = train.len();
    let u = 1.0 / n as f64;
    let mut ratios = Vec::new();
    for j in 0..50u64 {
        let d: WeightVector = sample_dirichlet(1.0, n, &mut Seed(3).stream(Domain::Dirichlet, j)).map_err(err)?;
        let e = |t: f64| -> Result<f64, String> {
            let w = WeightVector::new(d.as_slice().iter().map(|&di| u + t * (di - u)).collect(), 0.0).map_err(err)?;
            let a = perturb_parameters(&pack, model.theta_hat(), &w).map_err(err)?;
            let b = retrain_from(&model, &train, &w).map_err(err)?;
            Ok((a.values() - b.values()).norm())
        };
        ratios.push(e(0.04)? / e(0.02)?);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ensure((3.0..=5.0).contains(&mean), format!("mean e(2t)/e(t) = {mean:.4} over 50 directions"))
}

fn influence_vs_retrain_intervals() -> Outcome {
    let f = BenchmarkFunction::Forrester;
    let train: Dataset =
        generate_dataset(f, 60, default_noise_sd(f).map_err(err)?, Partition::Train, Seed(0)).map_err(err)?;
    let spec = ModelSpec::mlp(16).with_weight_decay(DEFAULT_WEIGHT_DECAY);
    let model = fit_erm(&spec, &train, Seed(1)).map_err(err)?;
    let pack = InfluencePack::from_model(&model);
    let draws = (0..300u64)
        .into_par_iter()
        .map(|b| {
            let w = sample_dirichlet(1.0, train.len(), &mut Seed(4).stream(Domain::Dirichlet, b))?;
            Ok((perturb_parameters(&pack, model.theta_hat(), &w)?, retrain_from(&model, &train, &w)?))
        })
        .collect::<confbb::Result<Vec<_>>>()
        .map_err(err)?;
    let mut worst = 0.0f64;
    for k in 0..=10u64 {
        let x = [k as f64 / 10.0];
        let mut lin = Vec::new();
        let mut full = Vec::new();
        for (a, b) in &draws {
            lin.push(linearized_prediction(&model, &x, a).map_err(err)?);
            full.push(model.predict_with(b.as_slice(), &x).map_err(err)?);
        }
        let make = |s: Vec<f64>| Ensemble::new(s, model.sigma_hat(), 1e-3 * model.target_sd(), 1.0, x.to_vec());
        // both intervals see the same noise draws
        let ia = interval(&make(lin).map_err(err)?, 0.9, true, &mut Seed(5).stream(Domain::Noise, k)).map_err(err)?;
        let ir = interval(&make(full).map_err(err)?, 0.9, true, &mut Seed(5).stream(Domain::Noise, k)).map_err(err)?;
        worst = worst.max((ia.lo - ir.lo).abs().max((ia.hi - ir.hi).abs()) / ir.width());
    }
    ensure(worst <= 0.15, format!("worst endpoint gap = {:.1}% of the refit interval width", 100.0 * worst))
}

fn consistency_on_forrester() -> Outcome {
    let f = BenchmarkFunction::Forrester;
    let exp = ExperimentConfig::new(f, Seed(0));
    let noise = exp.resolved_noise_sd().map_err(err)?;
    let train: Dataset = generate_dataset(f, exp.n_train, noise, Partition::Train, Seed(6)).map_err(err)?;
    let model = fit_erm(&exp.model, &train, Seed(7)).map_err(err)?;
    let pack = InfluencePack::from_model(&model);
    let test: Dataset = generate_dataset(f, 2000, noise, Partition::Test, Seed(8)).map_err(err)?;
    let source = |m: usize, s: Seed| generate_dataset(f, m, noise, Partition::Validation, s);
    let rows = consistency_diagnostic(&model, &pack, &exp.grid, &[25, 100, 400], &test, 20, exp.b_cal, source, Seed(9))
        .map_err(err)?;
    let gaps: Vec<String> = rows.iter().map(|r| format!("m={} {:.4}", r.m, r.mean_gap)).collect();
    ensure(rows[2].mean_gap < rows[0].mean_gap, format!("mean gaps {}", gaps.join(", ")))
}

struct SuiteRun {
    function: BenchmarkFunction,
    coverage: f64,
    log_score: f64,
    val_hat: f64,
    val_one: f64,
    test_hat: f64,
    test_one: f64,
}

fn suite() -> Result<Vec<SuiteRun>, String> {
    BenchmarkFunction::ALL
        .iter()
        .map(|&f| {
            let cfg = ExperimentConfig::new(f, Seed(0));
            let run = run_benchmark_detailed(&cfg).map_err(err)?;
            let cal = &run.calibration;
            let one = cal.grid.index_of(1.0).ok_or("grid lacks alpha = 1")?;
            Ok(SuiteRun {
                function: f,
                coverage: run.result.coverage,
                log_score: run.result.log_score,
                val_hat: cal.scores[cal.selected_index],
                val_one: cal.scores[one],
                test_hat: run.test.log_score,
                test_one: test_scores_at(&cfg, &run, 1.0).map_err(err)?.log_score,
            })
        })
        .collect()
}

static SUITE: std::sync::OnceLock<Result<Vec<SuiteRun>, String>> = std::sync::OnceLock::new();

fn suite_runs() -> Result<&'static [SuiteRun], String> {
    SUITE.get_or_init(suite).as_deref().map_err(Clone::clone)
}

fn suite_aggregates() -> Outcome {
    let runs = suite_runs()?;
    let avg = runs.iter().map(|r| r.coverage).sum::<f64>() / runs.len() as f64;
    let in_band = runs.iter().filter(|r| (0.65..=1.0).contains(&r.coverage)).count();
    let worst = runs.iter().map(|r| r.log_score).fold(f64::INFINITY, f64::min);
    let rows: Vec<String> =
        runs.iter().map(|r| format!("{} {:.3}/{:.2}", r.function, r.coverage, r.log_score)).collect();
    ensure(
        (0.80..=0.95).contains(&avg) && in_band >= 8 && worst.is_finite() && worst > -8.0,
        format!("average coverage {avg:.4}, {in_band}/10 in band, worst log-score {worst:.3} [{}]", rows.join("; ")),
    )
}

fn tuning_helps() -> Outcome {
    let runs = suite_runs()?;
    let val_ok = runs.iter().all(|r| r.val_hat >= r.val_one);
    let test_ok = runs.iter().filter(|r| r.test_hat >= r.test_one - 0.3).count();
    let worst = runs.iter().map(|r| r.test_hat - r.test_one).fold(f64::INFINITY, f64::min);
    ensure(
        val_ok && test_ok >= 8,
        format!("validation argmax holds: {val_ok}; {test_ok}/10 within 0.3 on test (worst test change {worst:+.3})"),
    )
}

fn dirichlet_moments() -> Outcome {
    let draws = 200_000u64;
    let mut details = Vec::new();
    let mut ok = true;
    for (n, alpha) in [(5usize, 0.5), (10, 1.0), (10, 8.0)] {
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..20u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = Seed(10 + n as u64).stream(Domain::Dirichlet, c);
                let mut s = vec![0.0; n];
                let mut s2 = vec![0.0; n];
                for _ in 0..draws / 20 {
                    let w: WeightVector = sample_dirichlet(alpha, n, &mut rng).unwrap();
                    for (j, &v) in w.as_slice().iter().enumerate() {
                        s[j] += v;
                        s2[j] += v * v;
                    }
                }
                (s, s2)
            })
            .collect();
        let total = draws as f64;
        let target_var = (n as f64 - 1.0) / ((n * n) as f64 * (n as f64 * alpha + 1.0));
        let mut mean_err = 0.0f64;
        let mut var_err = 0.0f64;
        for j in 0..n {
            let m = chunks.iter().map(|c| c.0[j]).sum::<f64>() / total;
            let m2 = chunks.iter().map(|c| c.1[j]).sum::<f64>() / total;
            let var = (m2 - m * m) * total / (total - 1.0);
            mean_err = mean_err.max((m - 1.0 / n as f64).abs());
            var_err = var_err.max((var - target_var).abs() / target_var);
        }
        ok &= mean_err <= 0.003 && var_err <= 0.05;
        details.push(format!("(n={n}, a={alpha}) mean err {mean_err:.1e}, var rel err {:.2}%", 100.0 * var_err));
    }
    ensure(ok, details.join("; "))
}

fn dropout_monotone() -> Outcome {
    let f = BenchmarkFunction::Forrester;
    let train: Dataset =
        generate_dataset(f, 100, default_noise_sd(f).map_err(err)?, Partition::Train, Seed(11)).map_err(err)?;
    let model = fit_erm(&ModelSpec::mlp(32).with_weight_decay(DEFAULT_WEIGHT_DECAY), &train, Seed(12)).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut rows = Vec::new();
    let mut ok = true;
    for q in 0..5u64 {
        let x = [rng.random_range(0.0..1.0)];
        let var = |p: f64| -> Result<f64, String> {
            let s = dropout_samples(
                &model,
                &x,
                &DropoutConfig { p, passes: 5000, seed: Seed(14).child(Domain::Dropout, q) },
            )
            .map_err(err)?;
            // shifted by the first pass so identical passes give exactly 0
            let d: Vec<f64> = s.iter().map(|v| v - s[0]).collect();
            let m = d.iter().sum::<f64>() / d.len() as f64;
            Ok(d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64)
        };
        let v = [var(0.0)?, var(0.1)?, var(0.3)?, var(0.5)?];
        ok &= v[0] == 0.0 && v[1] < v[2] && v[2] < v[3];
        rows.push(format!("[{:.1e} {:.2e} {:.2e} {:.2e}]", v[0], v[1], v[2], v[3]));
    }
    ensure(ok, format!("variances at p = 0/0.1/0.3/0.5: {}", rows.join(" ")))
}

fn byte_identical_reruns() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = tmp.path().join("config.json");
    let body = r#"{"function": "all", "nominal_level": 0.9, "record_timing": false, "seed": 0}"#;
    fs::write(&cfg, body).map_err(err)?;
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = tmp.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_confbb"))
            .args(["bench", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
            .output()
            .map_err(err)?;
        if !status.status.success() {
            return Err(format!(
                "bench exited with {:?}: {}",
                status.status.code(),
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        outputs.push(fs::read(out.join("results.csv")).map_err(err)?);
    }
    ensure(
        outputs[0] == outputs[1],
        format!("results.csv {} bytes, identical at 1 and 4 threads: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn numerical_checks() -> Outcome {
    let f = BenchmarkFunction::Branin;
    let train: Dataset =
        generate_dataset(f, 40, default_noise_sd(f).map_err(err)?, Partition::Train, Seed(15)).map_err(err)?;
    let model = fit_erm(&ModelSpec::mlp(8).with_weight_decay(DEFAULT_WEIGHT_DECAY), &train, Seed(16)).map_err(err)?;
    let d = model.n_params();
    let theta = model.theta_hat().values().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-5;
    let mut worst = [0.0f64; 3];

    for _ in 0..100 {
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let fd = DVector::from_fn(d, |j, _| {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p[j] += h;
            m[j] -= h;
            (model.predict_with(p.as_slice(), &x).unwrap() - model.predict_with(m.as_slice(), &x).unwrap()) / (2.0 * h)
        });
        worst[0] = worst[0].max(rel_err(&model.prediction_gradient(&x).map_err(err)?, &fd));

        let th = &theta + DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        let y = rng.random_range(-50.0..300.0);
        let fd = DVector::from_fn(d, |j, _| {
            let (mut p, mut m) = (th.clone(), th.clone());
            p[j] += h;
            m[j] -= h;
            (model.sample_loss(p.as_slice(), &x, y).unwrap() - model.sample_loss(m.as_slice(), &x, y).unwrap())
                / (2.0 * h)
        });
        worst[1] = worst[1].max(rel_err(&model.sample_loss_gradient(th.as_slice(), &x, y).map_err(err)?, &fd));
    }

    let hess = hessian_matrix(&model, &train, HessianMode::Exact).map_err(err)?;
    let mean_grad = |th: &DVector<f64>| {
        (0..train.len()).fold(DVector::zeros(d), |acc, i| {
            acc + model.sample_loss_gradient(th.as_slice(), &train.input_vec(i), train.targets()[i]).unwrap()
        }) / train.len() as f64
    };
    for _ in 0..100 {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let fd = (mean_grad(&(&theta + &v * h)) - mean_grad(&(&theta - &v * h))) / (2.0 * h);
        worst[2] = worst[2].max(rel_err(&(&hess * &v), &fd));
    }

    let mut mass_err = 0.0f64;
    for _ in 0..20 {
        let b = rng.random_range(2..60);
        let samples: Vec<f64> = (0..b).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = rng.random_range(0.05..2.0);
        let e = Ensemble::new(samples.clone(), s, 0.0, 1.0, vec![]).map_err(err)?;
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * s;
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * s;
        mass_err = mass_err.max((simpson(|y| log_score(&e, y).exp(), lo, hi, 20_000) - 1.0).abs());
    }
    ensure(
        worst.iter().all(|&w| w <= 1e-4) && mass_err <= 1e-3,
        format!(
            "relative FD error: prediction grad {:.1e}, loss grad {:.1e}, Hessian-vector {:.1e}; density mass error {mass_err:.1e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

const CHECKS: [Check; 10] = [
    Check {
        id: 1,
        name: "influence exactness (scalar mean)",
        budget: Duration::from_secs(1),
        run: scalar_mean_exactness,
    },
    Check {
        id: 2,
        name: "quadratic error bound (linear, 3 covariates)",
        budget: Duration::from_secs(5),
        run: quadratic_error_ratio,
    },
    Check {
        id: 3,
        name: "IF vs refit bootstrap intervals (MLP)",
        budget: Duration::from_secs(300),
        run: influence_vs_retrain_intervals,
    },
    Check {
        id: 4,
        name: "validation/test gap shrinks (Forrester)",
        budget: Duration::from_secs(180),
        run: consistency_on_forrester,
    },
    Check { id: 5, name: "suite coverage and log-score", budget: Duration::from_secs(900), run: suite_aggregates },
    Check { id: 6, name: "tuned alpha vs alpha = 1", budget: Duration::from_secs(900), run: tuning_helps },
    Check { id: 7, name: "Dirichlet moments", budget: Duration::from_secs(10), run: dirichlet_moments },
    Check { id: 8, name: "dropout variance", budget: Duration::from_secs(30), run: dropout_monotone },
    Check { id: 9, name: "byte-identical reruns", budget: Duration::from_secs(1800), run: byte_identical_reruns },
    Check {
        id: 10,
        name: "finite differences and density mass",
        budget: Duration::from_secs(60),
        run: numerical_checks,
    },
];

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for check in CHECKS.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let clock = Instant::now();
        let outcome = (check.run)();
        let took = clock.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= check.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", check.budget)),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] {:>2} {}: {} ({:.2} s)",
            if pass { "PASS" } else { "FAIL" },
            check.id,
            check.name,
            detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
