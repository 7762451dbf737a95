//! JSON run configuration. Unknown keys are rejected.

use std::path::Path;

use confbb::benchmarks::{BenchmarkFunction, ExperimentConfig, DEFAULT_WEIGHT_DECAY};
use confbb::models::{HessianMode, ModelKind, ModelSpec};
use confbb::predictive::{DEFAULT_CALIBRATION_DRAWS, DEFAULT_TEST_DRAWS};
use confbb::{AlphaGrid, Criterion, Seed};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `"all"`, one function name, or a list of names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSelection {
    One(String),
    Many(Vec<String>),
}

impl FunctionSelection {
    pub fn resolve(&self) -> Result<Vec<BenchmarkFunction>, CliError> {
        let names: Vec<&str> = match self {
            Self::One(s) if s.eq_ignore_ascii_case("all") => return Ok(BenchmarkFunction::ALL.to_vec()),
            Self::One(s) => vec![s.as_str()],
            Self::Many(v) => v.iter().map(String::as_str).collect(),
        };
        if names.is_empty() {
            return Err(CliError::Config("`function`: empty list".into()));
        }
        names
            .into_iter()
            .map(|n| n.parse().map_err(|_| CliError::Config(format!("`function`: unknown benchmark `{n}`"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub function: FunctionSelection,
    pub nominal_level: f64,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_val")]
    pub n_val: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    /// Absolute noise sd; omitted means 5% of the function's output sd.
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    #[serde(default = "defaults::hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub ridge_lambda: f64,
    #[serde(default = "defaults::yes")]
    pub fit_intercept: bool,
    #[serde(default)]
    pub hessian_mode: Option<HessianMode>,
    #[serde(default)]
    pub grid: Option<AlphaGrid>,
    #[serde(default = "defaults::b_cal")]
    pub b_cal: usize,
    #[serde(default = "defaults::b_test")]
    pub b_test: usize,
    #[serde(default = "defaults::criterion")]
    pub criterion: Criterion,
    #[serde(default = "defaults::yes")]
    pub include_noise: bool,
    #[serde(default)]
    pub seed: u64,
    /// When false, `runtime_s` is written as 0 so reruns are byte-identical.
    #[serde(default = "defaults::yes")]
    pub record_timing: bool,

    /// oracle-compare: fit an intercept-only model to the targets.
    #[serde(default)]
    pub drop_inputs: bool,
    #[serde(default = "defaults::oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default = "defaults::one")]
    pub oracle_alpha: f64,
    #[serde(default = "defaults::oracle_t")]
    pub oracle_t: f64,
    #[serde(default = "defaults::oracle_directions")]
    pub oracle_directions: usize,

    /// consistency: validation sizes, replications and the fixed test size.
    #[serde(default = "defaults::val_sizes")]
    pub val_sizes: Vec<usize>,
    #[serde(default = "defaults::replications")]
    pub replications: usize,
    #[serde(default = "defaults::consistency_test_size")]
    pub consistency_test_size: usize,

    /// compare-dropout: drop rate and forward passes (defaults to `b_test`).
    #[serde(default = "defaults::dropout_p")]
    pub dropout_p: f64,
    #[serde(default)]
    pub dropout_passes: Option<usize>,
}

mod defaults {
    use super::*;
    pub fn n_train() -> usize {
        100
    }
    pub fn n_val() -> usize {
        50
    }
    pub fn n_test() -> usize {
        40
    }
    pub fn model() -> ModelKind {
        ModelKind::Mlp
    }
    pub fn hidden_width() -> usize {
        32
    }
    pub fn weight_decay() -> f64 {
        DEFAULT_WEIGHT_DECAY
    }
    pub fn yes() -> bool {
        true
    }
    pub fn b_cal() -> usize {
        DEFAULT_CALIBRATION_DRAWS
    }
    pub fn b_test() -> usize {
        DEFAULT_TEST_DRAWS
    }
    pub fn criterion() -> Criterion {
        Criterion::LogScore
    }
    pub fn oracle_draws() -> usize {
        100
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn oracle_t() -> f64 {
        0.02
    }
    pub fn oracle_directions() -> usize {
        50
    }
    pub fn val_sizes() -> Vec<usize> {
        vec![25, 100, 400]
    }
    pub fn replications() -> usize {
        20
    }
    pub fn consistency_test_size() -> usize {
        2000
    }
    pub fn dropout_p() -> f64 {
        0.1
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: String| Err(CliError::Config(format!("`{key}`: {why}")));
        self.function.resolve()?;
        if !(self.nominal_level > 0.0 && self.nominal_level < 1.0) {
            return bad("nominal_level", format!("must lie in (0, 1), got {}", self.nominal_level));
        }
        for (key, v) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)] {
            if v == 0 {
                return bad(key, "must be >= 1".into());
            }
        }
        for (key, v) in [("b_cal", self.b_cal), ("b_test", self.b_test), ("oracle_draws", self.oracle_draws)] {
            if v < 2 {
                return bad(key, "must be >= 2".into());
            }
        }
        if let Some(s) = self.noise_sd {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("noise_sd", format!("must be finite and >= 0, got {s}"));
            }
        }
        if self.hidden_width == 0 {
            return bad("hidden_width", "must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", format!("must be finite and >= 0, got {}", self.weight_decay));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda", format!("must be finite and >= 0, got {}", self.ridge_lambda));
        }
        if !(self.oracle_alpha > 0.0 && self.oracle_alpha.is_finite()) {
            return bad("oracle_alpha", format!("must be positive, got {}", self.oracle_alpha));
        }
        if !(self.oracle_t > 0.0 && self.oracle_t <= 0.5) {
            return bad("oracle_t", format!("must lie in (0, 0.5], got {}", self.oracle_t));
        }
        if self.oracle_directions == 0 {
            return bad("oracle_directions", "must be >= 1".into());
        }
        if self.val_sizes.is_empty() || self.val_sizes.contains(&0) || self.val_sizes.windows(2).any(|p| p[0] >= p[1]) {
            return bad("val_sizes", "must be a nonempty increasing list of positive sizes".into());
        }
        if self.replications == 0 {
            return bad("replications", "must be >= 1".into());
        }
        if self.consistency_test_size == 0 {
            return bad("consistency_test_size", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p", format!("must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.dropout_passes == Some(0) || self.dropout_passes == Some(1) {
            return bad("dropout_passes", "must be >= 2".into());
        }
        Ok(())
    }

    pub fn functions(&self) -> Result<Vec<BenchmarkFunction>, CliError> {
        self.function.resolve()
    }

    /// The single function a one-task command runs on.
    pub fn single_function(&self, command: &str) -> Result<BenchmarkFunction, CliError> {
        match self.functions()?.as_slice() {
            [f] => Ok(*f),
            _ => Err(CliError::Config(format!("`function`: {command} needs exactly one benchmark function"))),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let base = match self.model {
            ModelKind::Linear => ModelSpec::linear(self.fit_intercept),
            ModelKind::Ridge => ModelSpec::ridge(self.ridge_lambda, self.fit_intercept),
            ModelKind::Mlp => ModelSpec::mlp(self.hidden_width).with_weight_decay(self.weight_decay),
        };
        match self.hessian_mode {
            Some(m) => base.with_hessian_mode(m),
            None => base,
        }
    }

    pub fn experiment(&self, function: BenchmarkFunction) -> ExperimentConfig {
        ExperimentConfig {
            function,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            noise_sd: self.noise_sd,
            model: self.model_spec(),
            grid: self.grid.clone().unwrap_or_default(),
            b_cal: self.b_cal,
            b_test: self.b_test,
            nominal_level: self.nominal_level,
            criterion: self.criterion,
            include_noise: self.include_noise,
            seed: Seed(self.seed),
        }
    }

    /// Canonical serialization used for the manifest digest.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
