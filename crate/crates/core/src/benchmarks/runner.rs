use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::BenchmarkFunction;
use crate::bootstrap::InfluencePack;
use crate::calibration::{tune_alpha, AlphaGrid, CalibrationResult, Criterion, TuneSettings};
use crate::data::{sample_sd, Dataset, Partition};
use crate::error::{invalid, Error, Result};
use crate::models::{fit_erm, FittedModel, ModelSpec};
use crate::predictive::{score_held_out, HeldOutScores, ParameterDraws, DEFAULT_CALIBRATION_DRAWS, DEFAULT_TEST_DRAWS};
use crate::rng::{Domain, Seed};
use crate::scalar::Real;

/// Default noise sd as a fraction of the function's output sd.
pub const RELATIVE_NOISE: f64 = 0.05;
/// L2 penalty on the network weights in the default protocol. Without it
/// the width-32 network interpolates 100 points and `σ̂` collapses.
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-2;
/// Domain samples used to estimate a function's output sd.
pub const NOISE_REFERENCE_SAMPLES: usize = 10_000;
const NOISE_REFERENCE_SEED: Seed = Seed(0x0b5e_55ed);

/// Inputs uniform on the domain box, targets `f(x) + N(0, noise_sd²)`.
/// Inputs and noise come from separate streams, so the inputs do not depend
/// on `noise_sd`.
pub fn generate_dataset<T: Real>(
    f: BenchmarkFunction,
    n: usize,
    noise_sd: f64,
    role: Partition,
    seed: Seed,
) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(invalid("dataset size must be >= 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(format!("noise_sd must be finite and >= 0, got {noise_sd}")));
    }
    let dom = f.domain();
    let mut input_rng = seed.stream(Domain::Data, 0);
    let mut noise_rng = seed.stream(Domain::Noise, 0);
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<T> = dom
            .iter()
            .map(|&(lo, hi)| {
                let u: f64 = Open01.sample(&mut input_rng);
                T::lit(lo + (hi - lo) * u)
            })
            .collect();
        let eps: f64 = noise_rng.sample(StandardNormal);
        targets.push(f.evaluate(&x)? + T::lit(noise_sd * eps));
        rows.push(x);
    }
    Dataset::from_rows(&rows, &targets, role)
}

/// `RELATIVE_NOISE` times the sd of `f` over uniform domain samples drawn
/// from a fixed seed.
pub fn default_noise_sd(f: BenchmarkFunction) -> Result<f64> {
    let clean: Dataset<f64> =
        generate_dataset(f, NOISE_REFERENCE_SAMPLES, 0.0, Partition::Train, NOISE_REFERENCE_SEED)?;
    Ok(RELATIVE_NOISE * sample_sd(clean.targets().as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub function: BenchmarkFunction,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// `None` selects [`default_noise_sd`].
    pub noise_sd: Option<f64>,
    pub model: ModelSpec,
    pub grid: AlphaGrid,
    pub b_cal: usize,
    pub b_test: usize,
    pub nominal_level: f64,
    pub criterion: Criterion,
    /// Add `N(0, σ̂²)` noise to ensemble draws before taking interval quantiles.
    pub include_noise: bool,
    pub seed: Seed,
}

impl ExperimentConfig {
    pub fn new(function: BenchmarkFunction, seed: Seed) -> Self {
        Self {
            function,
            n_train: 100,
            n_val: 50,
            n_test: 40,
            noise_sd: None,
            model: ModelSpec::mlp(32).with_weight_decay(DEFAULT_WEIGHT_DECAY),
            grid: AlphaGrid::standard(),
            b_cal: DEFAULT_CALIBRATION_DRAWS,
            b_test: DEFAULT_TEST_DRAWS,
            nominal_level: 0.9,
            criterion: Criterion::LogScore,
            include_noise: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(invalid("n_train, n_val and n_test must be >= 1"));
        }
        if self.b_cal < 2 || self.b_test < 2 {
            return Err(invalid("b_cal and b_test must be >= 2"));
        }
        if !(self.nominal_level > 0.0 && self.nominal_level < 1.0) {
            return Err(invalid(format!("nominal_level must lie in (0, 1), got {}", self.nominal_level)));
        }
        if let Some(s) = self.noise_sd {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("noise_sd must be finite and >= 0, got {s}")));
            }
        }
        self.model.validate()
    }

    pub fn resolved_noise_sd(&self) -> Result<f64> {
        match self.noise_sd {
            Some(s) => Ok(s),
            None => default_noise_sd(self.function),
        }
    }

    fn tune_settings(&self) -> TuneSettings {
        TuneSettings {
            criterion: self.criterion,
            nominal_level: self.nominal_level,
            draws: self.b_cal,
            include_noise: self.include_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset<f64>,
    pub val: Dataset<f64>,
    pub test: Dataset<f64>,
}

pub fn make_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let noise = cfg.resolved_noise_sd()?;
    let gen = |n, role, k| generate_dataset(cfg.function, n, noise, role, cfg.seed.child(Domain::Data, k));
    Ok(Splits {
        train: gen(cfg.n_train, Partition::Train, 0)?,
        val: gen(cfg.n_val, Partition::Validation, 1)?,
        test: gen(cfg.n_test, Partition::Test, 2)?,
    })
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub function: String,
    pub dim: usize,
    pub method: String,
    pub alpha_hat: f64,
    pub coverage: f64,
    pub log_score: f64,
    pub runtime_s: f64,
    pub seed: u64,
}

/// A finished run together with the intermediate objects.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub result: BenchmarkResult,
    pub calibration: CalibrationResult,
    pub test: HeldOutScores<f64>,
    pub model: FittedModel<f64>,
    pub splits: Splits,
}

pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkResult> {
    run_benchmark_detailed(cfg).map(|r| r.result)
}

/// Fit, tune α on the validation split, score the test split. The recorded
/// runtime covers those three stages only.
pub fn run_benchmark_detailed(cfg: &ExperimentConfig) -> Result<BenchmarkRun> {
    let name = cfg.function.name();
    let inner = || -> Result<BenchmarkRun> {
        cfg.validate()?;
        let splits = make_splits(cfg)?;
        let clock = Instant::now();
        let model = fit_erm(&cfg.model, &splits.train, cfg.seed.child(Domain::Init, 0))?;
        let pack = InfluencePack::from_model(&model);
        let calibration =
            tune_alpha(&model, &pack, &splits.val, &cfg.grid, &cfg.tune_settings(), cfg.seed.child(Domain::Grid, 0))?;
        let test = evaluate(cfg, &model, &pack, &splits.test, calibration.alpha_hat)?;
        let runtime_s = clock.elapsed().as_secs_f64();
        let result = BenchmarkResult {
            function: name.to_string(),
            dim: cfg.function.dim(),
            method: "ifbb".into(),
            alpha_hat: calibration.alpha_hat,
            coverage: test.coverage,
            log_score: test.log_score,
            runtime_s,
            seed: cfg.seed.0,
        };
        Ok(BenchmarkRun { result, calibration, test, model, splits })
    };
    inner().map_err(|e| e.context(format!("benchmark {name}")))
}

fn evaluate(
    cfg: &ExperimentConfig,
    model: &FittedModel<f64>,
    pack: &InfluencePack<'_, f64>,
    test: &Dataset<f64>,
    alpha: f64,
) -> Result<HeldOutScores<f64>> {
    let draws = ParameterDraws::generate(pack, alpha, cfg.b_test, cfg.seed.child(Domain::Evaluation, 0))?;
    let ens = draws.ensembles_for(model, test)?;
    score_held_out(&ens, test, cfg.nominal_level, cfg.include_noise, cfg.seed.child(Domain::Evaluation, 1))
}

/// Test-split scores of a finished run at another concentration, using the
/// same draw and noise streams as the run itself.
pub fn test_scores_at(cfg: &ExperimentConfig, run: &BenchmarkRun, alpha: f64) -> Result<HeldOutScores<f64>> {
    let pack = InfluencePack::from_model(&run.model);
    evaluate(cfg, &run.model, &pack, &run.splits.test, alpha)
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub function: BenchmarkFunction,
    pub outcome: std::result::Result<BenchmarkResult, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteAverage {
    pub coverage: f64,
    pub log_score: f64,
    pub runtime_s: f64,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub rows: Vec<SuiteRow>,
    /// Means over the rows that succeeded; `None` if none did.
    pub average: Option<SuiteAverage>,
}

impl SuiteOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn results(&self) -> impl Iterator<Item = &BenchmarkResult> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok())
    }
}

/// Runs each config in order. A failing row is recorded and the rest still run.
pub fn run_suite(cfgs: &[ExperimentConfig]) -> Result<SuiteOutcome> {
    if cfgs.is_empty() {
        return Err(invalid("benchmark suite is empty"));
    }
    let rows: Vec<SuiteRow> = cfgs
        .iter()
        .map(|cfg| SuiteRow { function: cfg.function, outcome: run_benchmark(cfg).map_err(|e: Error| e.to_string()) })
        .collect();
    let ok: Vec<&BenchmarkResult> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let average = (!ok.is_empty()).then(|| {
        let k = ok.len() as f64;
        SuiteAverage {
            coverage: ok.iter().map(|r| r.coverage).sum::<f64>() / k,
            log_score: ok.iter().map(|r| r.log_score).sum::<f64>() / k,
            runtime_s: ok.iter().map(|r| r.runtime_s).sum::<f64>() / k,
            rows: ok.len(),
        }
    });
    Ok(SuiteOutcome { rows, average })
}
