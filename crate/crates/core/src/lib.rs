//! Influence-function Bayesian bootstrap (IF-BB) for predictive uncertainty.
//!
//! A base model is fit once; Dirichlet reweightings of the training data are
//! then propagated to predictions through a first-order influence expansion
//! instead of refitting. The Dirichlet concentration is tuned on held-out
//! data by log-score or interval coverage.
//!
//! All numerics are generic over [`Real`] (`f32`/`f64`). The aliases below fix
//! the scalar to `f64`, which is what the command-line tool uses.

pub mod baselines;
pub mod benchmarks;
pub mod bootstrap;
pub mod calibration;
pub mod error;
pub mod models;
pub mod predictive;
pub mod rng;
pub mod scalar;

mod data;

pub use data::{Dataset as GenericDataset, Partition};
pub use error::{Error, Result};
pub use rng::{Domain, Seed};
pub use scalar::Real;

pub use baselines::DropoutConfig;
pub use benchmarks::{BenchmarkFunction, BenchmarkResult, ExperimentConfig};
pub use calibration::{AlphaGrid, CalibrationResult, Criterion, TuneSettings};
pub use models::{HessianMode, ModelKind, ModelSpec};

pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type FittedModel = models::FittedModel<f64>;
pub type FittedModel32 = models::FittedModel<f32>;
pub type ParameterVector = models::ParameterVector<f64>;
pub type HessianApprox = models::HessianApprox<f64>;
pub type WeightVector = bootstrap::WeightVector<f64>;
pub type InfluencePack<'a> = bootstrap::InfluencePack<'a, f64>;
pub type PredictiveEnsemble = predictive::PredictiveEnsemble<f64>;
pub type PredictiveEnsemble32 = predictive::PredictiveEnsemble<f32>;
pub type PredictionInterval = predictive::PredictionInterval<f64>;
