//! Bayesian-bootstrap predictive ensembles, intervals, coverage and log-score.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bootstrap::{sample_dirichlet, InfluencePack};
use crate::data::{Dataset, Partition};
use crate::error::{invalid, shape, Error, Result};
use crate::models::FittedModel;
use crate::rng::{Domain, Seed};
use crate::scalar::Real;

/// Resamples used when scoring a grid point on validation data.
pub const DEFAULT_CALIBRATION_DRAWS: usize = 500;
/// Resamples used for final test-set evaluation.
pub const DEFAULT_TEST_DRAWS: usize = 2000;
/// The density bandwidth never drops below this fraction of the training
/// target standard deviation.
pub const BANDWIDTH_FLOOR_FRACTION: f64 = 1e-3;

/// `B` predictive draws at one query point plus the noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveEnsemble<T: Real> {
    samples: Vec<T>,
    sigma_hat: T,
    bandwidth_floor: T,
    alpha: f64,
    x_query: Vec<T>,
}

impl<T: Real> PredictiveEnsemble<T> {
    pub fn new(samples: Vec<T>, sigma_hat: T, bandwidth_floor: T, alpha: f64, x_query: Vec<T>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid(format!("an ensemble needs at least 2 samples, got {}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("ensemble contains non-finite samples"));
        }
        if sigma_hat < T::zero() || bandwidth_floor < T::zero() {
            return Err(invalid("noise scales must be nonnegative"));
        }
        Ok(Self { samples, sigma_hat, bandwidth_floor, alpha, x_query })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sigma_hat(&self) -> T {
        self.sigma_hat
    }

    /// Dirichlet concentration; 0 for ensembles from other samplers.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn x_query(&self) -> &[T] {
        &self.x_query
    }

    /// Kernel scale of the predictive mixture: `max(σ̂, floor)`.
    pub fn bandwidth(&self) -> T {
        self.sigma_hat.max(self.bandwidth_floor)
    }

    pub fn mean(&self) -> T {
        crate::data::mean(&self.samples)
    }

    pub fn sd(&self) -> T {
        crate::data::sample_sd(&self.samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval<T: Real> {
    pub lo: T,
    pub hi: T,
    pub level: f64,
}

impl<T: Real> PredictionInterval<T> {
    pub fn contains(&self, y: T) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }
}

/// Influence parameter shifts `θ̂_w − θ̂` for `B` Dirichlet draws. Draw `b`
/// uses its own stream, so results do not depend on the thread count.
#[derive(Debug, Clone)]
pub struct ParameterDraws<T: Real> {
    shifts: Vec<DVector<T>>,
    alpha: f64,
}

impl<T: Real> ParameterDraws<T> {
    pub fn generate(pack: &InfluencePack<'_, T>, alpha: f64, draws: usize, seed: Seed) -> Result<Self> {
        if draws < 2 {
            return Err(invalid(format!("need at least 2 resamples, got {draws}")));
        }
        let n = pack.n();
        let shifts = (0..draws)
            .into_par_iter()
            .map(|b| {
                let mut rng = seed.stream(Domain::Dirichlet, b as u64);
                let w = sample_dirichlet(alpha, n, &mut rng)?;
                pack.parameter_shift(&w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { shifts, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[DVector<T>] {
        &self.shifts
    }

    /// Linearized predictions `f(x, θ̂) + ∇f(x, θ̂)ᵀ Δθ_b` at `x`.
    pub fn ensemble_at(&self, model: &FittedModel<T>, x: &[T]) -> Result<PredictiveEnsemble<T>> {
        let base = model.predict(x)?;
        let grad = model.prediction_gradient(x)?;
        let samples = self.shifts.iter().map(|s| base + grad.dot(s)).collect();
        PredictiveEnsemble::new(samples, model.sigma_hat(), bandwidth_floor(model), self.alpha, x.to_vec())
    }

    /// One ensemble per row of `data`, in row order.
    pub fn ensembles_for(&self, model: &FittedModel<T>, data: &Dataset<T>) -> Result<Vec<PredictiveEnsemble<T>>> {
        (0..data.len()).into_par_iter().map(|i| self.ensemble_at(model, &data.input_vec(i))).collect()
    }
}

pub(crate) fn bandwidth_floor<T: Real>(model: &FittedModel<T>) -> T {
    T::lit(BANDWIDTH_FLOOR_FRACTION) * model.target_sd()
}

/// IF-BB predictive ensemble at a single query point.
pub fn build_ensemble<T: Real>(
    model: &FittedModel<T>,
    pack: &InfluencePack<'_, T>,
    x: &[T],
    alpha: f64,
    draws: usize,
    seed: Seed,
) -> Result<PredictiveEnsemble<T>> {
    ParameterDraws::generate(pack, alpha, draws, seed)?.ensemble_at(model, x)
}

/// Empirical quantile with linear interpolation at 0-based position
/// `(B − 1)·q` of the sorted sample.
pub fn quantile<T: Real>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted<T: Real>(mut xs: Vec<T>) -> Vec<T> {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    xs
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("interval level must lie in (0, 1), got {level}")))
    }
}

/// Samples, each augmented with independent `N(0, s²)` noise when asked,
/// where `s` is the floored bandwidth.
pub fn augmented_samples<T: Real, R: Rng + ?Sized>(
    ens: &PredictiveEnsemble<T>,
    include_noise: bool,
    rng: &mut R,
) -> Vec<T> {
    let s = ens.bandwidth();
    if !include_noise || s == T::zero() {
        return ens.samples.clone();
    }
    ens.samples
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + s * T::lit(z)
        })
        .collect()
}

/// Central interval from the `(1 − level)/2` and `(1 + level)/2` quantiles.
pub fn interval<T: Real, R: Rng + ?Sized>(
    ens: &PredictiveEnsemble<T>,
    level: f64,
    include_noise: bool,
    rng: &mut R,
) -> Result<PredictionInterval<T>> {
    check_level(level)?;
    let xs = sorted(augmented_samples(ens, include_noise, rng));
    Ok(interval_from_sorted(&xs, level))
}

pub fn interval_from_sorted<T: Real>(sorted: &[T], level: f64) -> PredictionInterval<T> {
    let tail = 0.5 * (1.0 - level);
    PredictionInterval { lo: quantile(sorted, tail), hi: quantile(sorted, 1.0 - tail), level }
}

/// Fraction of targets inside their intervals.
pub fn empirical_coverage<T: Real>(intervals: &[PredictionInterval<T>], targets: &[T]) -> Result<f64> {
    if intervals.len() != targets.len() {
        return Err(shape(format!("{} intervals but {} targets", intervals.len(), targets.len())));
    }
    if intervals.is_empty() {
        return Err(invalid("coverage of an empty set"));
    }
    let hits = intervals.iter().zip(targets).filter(|(iv, &y)| iv.contains(y)).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// `log (1/B) Σ_b φ(y; μ_b, s²)`, evaluated with log-sum-exp.
pub fn normal_mixture_log_density<T: Real>(centers: &[T], y: T, s: T) -> T {
    let half = T::lit(0.5);
    let log_norm = -s.ln() - half * T::two_pi().ln();
    let exps: Vec<T> = centers
        .iter()
        .map(|&m| {
            let z = (y - m) / s;
            -half * z * z
        })
        .collect();
    let top = exps.iter().copied().fold(T::min_value().unwrap_or_else(|| -T::one()), |a, b| a.max(b));
    let sum = exps.iter().fold(T::zero(), |a, &e| a + (e - top).exp());
    top + sum.ln() - T::from_usize_lossy(centers.len()).ln() + log_norm
}

/// Log predictive density of `y` under the ensemble's normal mixture.
pub fn log_score<T: Real>(ens: &PredictiveEnsemble<T>, y: T) -> T {
    normal_mixture_log_density(&ens.samples, y, ens.bandwidth())
}

pub fn average_log_score<T: Real>(ensembles: &[PredictiveEnsemble<T>], targets: &[T]) -> Result<T> {
    if ensembles.len() != targets.len() {
        return Err(shape(format!("{} ensembles but {} targets", ensembles.len(), targets.len())));
    }
    if ensembles.is_empty() {
        return Err(invalid("log-score of an empty set"));
    }
    let total = ensembles.iter().zip(targets).fold(T::zero(), |a, (e, &y)| a + log_score(e, y));
    Ok(total / T::from_usize_lossy(targets.len()))
}

/// Metrics of one ensemble family on a held-out partition.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutScores<T: Real> {
    pub log_score: T,
    pub coverage: f64,
    pub intervals: Vec<PredictionInterval<T>>,
}

/// Scores ensembles against the targets of a validation or test partition.
/// Noise for the interval at row `i` comes from stream `i` of `noise_seed`.
pub fn score_held_out<T: Real>(
    ensembles: &[PredictiveEnsemble<T>],
    data: &Dataset<T>,
    level: f64,
    include_noise: bool,
    noise_seed: Seed,
) -> Result<HeldOutScores<T>> {
    if data.role() == Partition::Train {
        return Err(Error::PartitionError("held-out metrics computed on training data".into()));
    }
    check_level(level)?;
    let targets = data.targets().as_slice();
    let log_score = average_log_score(ensembles, targets)?;
    let intervals = ensembles
        .par_iter()
        .enumerate()
        .map(|(i, e)| interval(e, level, include_noise, &mut noise_seed.stream(Domain::Noise, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let coverage = empirical_coverage(&intervals, targets)?;
    Ok(HeldOutScores { log_score, coverage, intervals })
}
