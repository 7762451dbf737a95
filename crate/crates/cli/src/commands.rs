//! The five subcommands. Each writes its files plus `config.json` and
//! `manifest.json` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use confbb::baselines::{dropout_ensembles_for, DropoutConfig};
use confbb::benchmarks::{
    generate_dataset, make_splits, run_benchmark_detailed, run_suite, BenchmarkFunction, ExperimentConfig,
};
use confbb::bootstrap::{
    linearized_prediction, perturb_parameters, retrain_from, sample_dirichlet, InfluencePack, WeightVector,
};
use confbb::calibration::consistency_diagnostic;
use confbb::models::{fit_erm, FittedModel};
use confbb::predictive::score_held_out;
use confbb::{Dataset, Domain, Partition, Seed};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::manifest::write_manifest;
use crate::output::{full, sig6, write_csv, write_json};
use crate::CliError;

pub const RESULTS_HEADER: [&str; 8] =
    ["function", "dim", "method", "alpha_hat", "coverage", "log_score", "runtime_s", "seed"];
pub const CURVE_HEADER: [&str; 5] = ["alpha", "score", "log_score", "coverage", "selected"];
pub const ORACLE_HEADER: [&str; 4] = ["draw", "alpha", "param_err", "pred_err"];
pub const CONSISTENCY_HEADER: [&str; 3] = ["m", "mean_gap", "sd_gap"];
pub const COMPARISON_HEADER: [&str; 8] =
    ["method", "function", "dim", "coverage", "log_score", "runtime_s", "split_hash", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bench,
    Calibrate,
    OracleCompare,
    Consistency,
    CompareDropout,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bench => "bench",
            Self::Calibrate => "calibrate",
            Self::OracleCompare => "oracle-compare",
            Self::Consistency => "consistency",
            Self::CompareDropout => "compare-dropout",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Some rows failed while others succeeded.
    pub partial: bool,
    pub files: Vec<PathBuf>,
}

pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_manifest(out, cmd.name(), cfg)?;
    match cmd {
        Command::Bench => bench(cfg, out),
        Command::Calibrate => calibrate(cfg, out),
        Command::OracleCompare => oracle_compare(cfg, out),
        Command::Consistency => consistency(cfg, out),
        Command::CompareDropout => compare_dropout(cfg, out),
    }
}

fn shown_runtime(cfg: &RunConfig, t: f64) -> f64 {
    if cfg.record_timing {
        t
    } else {
        0.0
    }
}

#[derive(Serialize)]
struct BenchJson {
    rows: Vec<confbb::BenchmarkResult>,
    average: Option<AverageJson>,
    failures: Vec<FailureJson>,
}

#[derive(Serialize)]
struct AverageJson {
    function: &'static str,
    method: &'static str,
    coverage: f64,
    log_score: f64,
    runtime_s: f64,
    seed: u64,
    rows: usize,
}

#[derive(Serialize)]
struct FailureJson {
    function: String,
    error: String,
}

fn bench(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let experiments: Vec<ExperimentConfig> = cfg.functions()?.into_iter().map(|f| cfg.experiment(f)).collect();
    let suite = run_suite(&experiments)?;

    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    for row in &suite.rows {
        match &row.outcome {
            Ok(r) => {
                let shown = confbb::BenchmarkResult { runtime_s: shown_runtime(cfg, r.runtime_s), ..r.clone() };
                rows.push(vec![
                    shown.function.clone(),
                    shown.dim.to_string(),
                    shown.method.clone(),
                    full(shown.alpha_hat),
                    sig6(shown.coverage),
                    sig6(shown.log_score),
                    sig6(shown.runtime_s),
                    shown.seed.to_string(),
                ]);
                timings.push(vec![r.function.clone(), sig6(r.runtime_s)]);
                json_rows.push(shown);
            }
            Err(e) => {
                eprintln!("{}: {e}", row.function);
                failures.push(FailureJson { function: row.function.name().into(), error: e.clone() });
            }
        }
    }
    let average = suite.average.map(|a| AverageJson {
        function: "Average",
        method: "ifbb",
        coverage: a.coverage,
        log_score: a.log_score,
        runtime_s: shown_runtime(cfg, a.runtime_s),
        seed: cfg.seed,
        rows: a.rows,
    });
    if let Some(a) = &average {
        rows.push(vec![
            a.function.into(),
            String::new(),
            a.method.into(),
            String::new(),
            sig6(a.coverage),
            sig6(a.log_score),
            sig6(a.runtime_s),
            a.seed.to_string(),
        ]);
    }
    let csv_path = out.join("results.csv");
    let json_path = out.join("results.json");
    let timing_path = out.join("timings.csv");
    write_csv(&csv_path, &RESULTS_HEADER, &rows)?;
    write_json(&json_path, &BenchJson { rows: json_rows, average, failures })?;
    write_csv(&timing_path, &["function", "runtime_s"], &timings)?;
    if suite.failures() == suite.rows.len() {
        return Err(CliError::Run("every benchmark row failed".into()));
    }
    Ok(Report { partial: suite.failures() > 0, files: vec![csv_path, json_path, timing_path] })
}

#[derive(Serialize)]
struct CalibrateJson<'a> {
    function: &'static str,
    alpha_hat: f64,
    selected_index: usize,
    calibration: &'a confbb::CalibrationResult,
    test_coverage: f64,
    test_log_score: f64,
}

fn calibrate(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let f = cfg.single_function("calibrate")?;
    let run = run_benchmark_detailed(&cfg.experiment(f))?;
    let cal = &run.calibration;
    let rows: Vec<Vec<String>> = (0..cal.grid.len())
        .map(|k| {
            vec![
                full(cal.grid.values()[k]),
                full(cal.scores[k]),
                full(cal.log_scores[k]),
                full(cal.coverages[k]),
                (k == cal.selected_index).to_string(),
            ]
        })
        .collect();
    let csv_path = out.join("calibration_curve.csv");
    let json_path = out.join("calibration.json");
    write_csv(&csv_path, &CURVE_HEADER, &rows)?;
    write_json(
        &json_path,
        &CalibrateJson {
            function: f.name(),
            alpha_hat: cal.alpha_hat,
            selected_index: cal.selected_index,
            calibration: cal,
            test_coverage: run.test.coverage,
            test_log_score: run.test.log_score,
        },
    )?;
    Ok(Report { partial: false, files: vec![csv_path, json_path] })
}

/// Summary of the influence approximation against exact weighted refits.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub function: String,
    pub model: String,
    pub drop_inputs: bool,
    pub n_train: usize,
    pub n_params: usize,
    pub draws: usize,
    pub alpha: f64,
    pub max_param_err: f64,
    pub mean_param_err: f64,
    pub max_pred_err: f64,
    pub mean_pred_err: f64,
    /// Mean over query points of the sd of retrained predictions.
    pub mean_predictive_sd: f64,
    pub pred_err_over_sd: f64,
    pub t: f64,
    /// Mean of `e(2t)/e(t)` over random directions; absent when the
    /// approximation is exact.
    pub quadratic_ratio: Option<f64>,
    pub directions: usize,
}

fn oracle_compare(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let f = cfg.single_function("oracle-compare")?;
    let exp = cfg.experiment(f);
    let splits = make_splits(&exp)?;
    let (train, queries) = if cfg.drop_inputs {
        (splits.train.without_inputs(), splits.test.without_inputs())
    } else {
        (splits.train, splits.test)
    };
    let model = fit_erm(&exp.model, &train, exp.seed.child(Domain::Init, 0))?;
    let pack = InfluencePack::from_model(&model);
    let seed = exp.seed.child(Domain::Oracle, 0);
    let n = train.len();

    struct Draw {
        param_err: f64,
        pred_err: f64,
        retrained: Vec<f64>,
    }
    let draws = (0..cfg.oracle_draws)
        .into_par_iter()
        .map(|k| -> Result<Draw, confbb::Error> {
            let w = sample_dirichlet(cfg.oracle_alpha, n, &mut seed.stream(Domain::Dirichlet, k as u64))?;
            let (theta_if, theta_rt) = if_and_refit(&model, &pack, &train, &w)?;
            let param_err = (theta_if.values() - theta_rt.values()).norm();
            let mut retrained = Vec::with_capacity(queries.len());
            let mut err = 0.0;
            for i in 0..queries.len() {
                let x = queries.input_vec(i);
                let lin = linearized_prediction(&model, &x, &theta_if)?;
                let exact = model.predict_with(theta_rt.as_slice(), &x)?;
                err += (lin - exact).abs();
                retrained.push(exact);
            }
            Ok(Draw { param_err, pred_err: err / queries.len() as f64, retrained })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let k = draws.len() as f64;
    let mean_predictive_sd = (0..queries.len())
        .map(|i| {
            let v: Vec<f64> = draws.iter().map(|d| d.retrained[i]).collect();
            let m = v.iter().sum::<f64>() / k;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        })
        .sum::<f64>()
        / queries.len() as f64;

    let quad_seed = exp.seed.child(Domain::Oracle, 1);
    let ratios = (0..cfg.oracle_directions)
        .into_par_iter()
        .map(|j| quadratic_ratio(&model, &pack, &train, cfg.oracle_t, quad_seed.stream(Domain::Dirichlet, j as u64)))
        .collect::<Result<Vec<Option<f64>>, _>>()?;
    let finite: Vec<f64> = ratios.into_iter().flatten().collect();
    let quadratic_ratio = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);

    let mean_pred_err = draws.iter().map(|d| d.pred_err).sum::<f64>() / k;
    let summary = OracleSummary {
        function: f.name().into(),
        model: format!("{:?}", exp.model.kind).to_lowercase(),
        drop_inputs: cfg.drop_inputs,
        n_train: n,
        n_params: model.n_params(),
        draws: draws.len(),
        alpha: cfg.oracle_alpha,
        max_param_err: draws.iter().map(|d| d.param_err).fold(0.0, f64::max),
        mean_param_err: draws.iter().map(|d| d.param_err).sum::<f64>() / k,
        max_pred_err: draws.iter().map(|d| d.pred_err).fold(0.0, f64::max),
        mean_pred_err,
        mean_predictive_sd,
        pred_err_over_sd: if mean_predictive_sd > 0.0 { mean_pred_err / mean_predictive_sd } else { f64::NAN },
        t: cfg.oracle_t,
        quadratic_ratio,
        directions: cfg.oracle_directions,
    };
    let rows: Vec<Vec<String>> = draws
        .iter()
        .enumerate()
        .map(|(b, d)| vec![b.to_string(), full(cfg.oracle_alpha), sig6(d.param_err), sig6(d.pred_err)])
        .collect();
    let csv_path = out.join("oracle_draws.csv");
    let json_path = out.join("oracle_summary.json");
    write_csv(&csv_path, &ORACLE_HEADER, &rows)?;
    write_json(&json_path, &summary)?;
    Ok(Report { partial: false, files: vec![csv_path, json_path] })
}

fn if_and_refit(
    model: &FittedModel<f64>,
    pack: &InfluencePack<'_, f64>,
    train: &Dataset,
    w: &WeightVector<f64>,
) -> Result<(confbb::ParameterVector, confbb::ParameterVector), confbb::Error> {
    Ok((perturb_parameters(pack, model.theta_hat(), w)?, retrain_from(model, train, w)?))
}

/// `e(2t)/e(t)` along `w(t) = u + t(d − u)` for a Dirichlet(1) point `d`;
/// `None` when `e(t)` is zero to rounding.
fn quadratic_ratio(
    model: &FittedModel<f64>,
    pack: &InfluencePack<'_, f64>,
    train: &Dataset,
    t: f64,
    mut rng: confbb::rng::StreamRng,
) -> Result<Option<f64>, confbb::Error> {
    let n = train.len();
    let d: WeightVector<f64> = sample_dirichlet(1.0, n, &mut rng)?;
    let u = 1.0 / n as f64;
    let err = |s: f64| -> Result<f64, confbb::Error> {
        let w = WeightVector::new(d.as_slice().iter().map(|&di| u + s * (di - u)).collect(), 0.0)?;
        let (a, b) = if_and_refit(model, pack, train, &w)?;
        Ok((a.values() - b.values()).norm())
    };
    let (e1, e2) = (err(t)?, err(2.0 * t)?);
    let scale = model.theta_hat().values().norm().max(1.0);
    Ok((e1 > 1e3 * f64::EPSILON * scale).then(|| e2 / e1))
}

fn consistency(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let f = cfg.single_function("consistency")?;
    let exp = cfg.experiment(f);
    let splits = make_splits(&exp)?;
    let noise = exp.resolved_noise_sd()?;
    let model = fit_erm(&exp.model, &splits.train, exp.seed.child(Domain::Init, 0))?;
    let pack = InfluencePack::from_model(&model);
    let test: Dataset =
        generate_dataset(f, cfg.consistency_test_size, noise, Partition::Test, exp.seed.child(Domain::Data, 3))?;
    let source = |m: usize, s: Seed| generate_dataset(f, m, noise, Partition::Validation, s);
    let rows = consistency_diagnostic(
        &model,
        &pack,
        &exp.grid,
        &cfg.val_sizes,
        &test,
        cfg.replications,
        cfg.b_cal,
        source,
        exp.seed.child(Domain::Replication, 0),
    )?;
    let csv_rows: Vec<Vec<String>> =
        rows.iter().map(|r| vec![r.m.to_string(), sig6(r.mean_gap), sig6(r.sd_gap)]).collect();
    let csv_path = out.join("consistency.csv");
    let json_path = out.join("consistency.json");
    write_csv(&csv_path, &CONSISTENCY_HEADER, &csv_rows)?;
    write_json(&json_path, &rows)?;
    Ok(Report { partial: false, files: vec![csv_path, json_path] })
}

/// SHA-256 over the little-endian bytes of a split's inputs and targets.
pub fn split_hash(data: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in data.inputs().iter().chain(data.targets().iter()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub function: String,
    pub dim: usize,
    pub coverage: f64,
    pub log_score: f64,
    pub runtime_s: f64,
    pub split_hash: String,
    pub seed: u64,
}

fn compare_dropout(cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    let f: BenchmarkFunction = cfg.single_function("compare-dropout")?;
    let exp = cfg.experiment(f);
    let run = run_benchmark_detailed(&exp)?;
    let hash = split_hash(&run.splits.test);

    // the dropout timing includes its own fit so neither method is charged
    // for the other's work
    let clock = Instant::now();
    let model = fit_erm(&exp.model, &run.splits.train, exp.seed.child(Domain::Init, 0))?;
    let dcfg = DropoutConfig {
        p: cfg.dropout_p,
        passes: cfg.dropout_passes.unwrap_or(cfg.b_test),
        seed: exp.seed.child(Domain::Dropout, 0),
    };
    let ens = dropout_ensembles_for(&model, &run.splits.test, &dcfg)?;
    let scores = score_held_out(
        &ens,
        &run.splits.test,
        exp.nominal_level,
        exp.include_noise,
        exp.seed.child(Domain::Evaluation, 1),
    )?;
    let dropout_time = clock.elapsed().as_secs_f64();

    let rows = vec![
        ComparisonRow {
            method: "ifbb".into(),
            function: f.name().into(),
            dim: f.dim(),
            coverage: run.result.coverage,
            log_score: run.result.log_score,
            runtime_s: shown_runtime(cfg, run.result.runtime_s),
            split_hash: hash.clone(),
            seed: cfg.seed,
        },
        ComparisonRow {
            method: "mc_dropout".into(),
            function: f.name().into(),
            dim: f.dim(),
            coverage: scores.coverage,
            log_score: scores.log_score,
            runtime_s: shown_runtime(cfg, dropout_time),
            split_hash: hash,
            seed: cfg.seed,
        },
    ];
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.function.clone(),
                r.dim.to_string(),
                sig6(r.coverage),
                sig6(r.log_score),
                sig6(r.runtime_s),
                r.split_hash.clone(),
                r.seed.to_string(),
            ]
        })
        .collect();
    let csv_path = out.join("comparison.csv");
    let json_path = out.join("comparison.json");
    write_csv(&csv_path, &COMPARISON_HEADER, &csv_rows)?;
    write_json(&json_path, &rows)?;
    Ok(Report { partial: false, files: vec![csv_path, json_path] })
}
