//! Emulation benchmark suite: test functions, synthetic datasets and the
//! end-to-end fit / tune / evaluate pipeline.

mod functions;
mod runner;

pub use functions::BenchmarkFunction;
pub use runner::{
    default_noise_sd, generate_dataset, make_splits, run_benchmark, run_benchmark_detailed, run_suite, test_scores_at,
    BenchmarkResult, BenchmarkRun, ExperimentConfig, Splits, SuiteAverage, SuiteOutcome, SuiteRow,
    DEFAULT_WEIGHT_DECAY, NOISE_REFERENCE_SAMPLES, RELATIVE_NOISE,
};
