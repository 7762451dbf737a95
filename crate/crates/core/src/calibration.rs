//! Grid search over the Dirichlet concentration on held-out data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::InfluencePack;
use crate::data::{Dataset, Partition};
use crate::error::{invalid, Error, Result};
use crate::models::FittedModel;
use crate::predictive::{
    average_log_score, score_held_out, ParameterDraws, PredictiveEnsemble, DEFAULT_CALIBRATION_DRAWS,
};
use crate::rng::{Domain, Seed};
use crate::scalar::Real;

/// Scores closer than this are treated as equal; the smaller α wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Candidate concentrations, strictly increasing and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AlphaGrid {
    values: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("alpha grid is empty"));
        }
        if values.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("alpha grid values must be finite and positive"));
        }
        if values.windows(2).any(|p| p[0] >= p[1]) {
            return Err(invalid("alpha grid must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// `log_spaced(lo, hi, k)`: `k` points evenly spaced in `log α`.
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 0 || !(lo > 0.0 && hi > lo) {
            return Err(invalid(format!("bad log grid [{lo}, {hi}] with {points} points")));
        }
        if points == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (points - 1) as f64;
        Self::new((0..points).map(|k| (a + step * k as f64).exp()).collect())
    }

    /// 13 points `10^(−1.25 + k/4)`, roughly 0.056 to 56, with α = 1 at k = 5.
    pub fn standard() -> Self {
        Self::new(
            (0..13)
                .map(|k| 10f64.powf(-1.25 + 0.25 * k as f64))
                .map(|a| if (a - 1.0).abs() < 1e-12 { 1.0 } else { a })
                .collect(),
        )
        .expect("standard grid is valid")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, alpha: f64) -> Option<usize> {
        self.values.iter().position(|&a| a == alpha)
    }
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<f64>> for AlphaGrid {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<AlphaGrid> for Vec<f64> {
    fn from(g: AlphaGrid) -> Self {
        g.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    LogScore,
    /// Closest empirical coverage to the nominal level.
    Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub criterion: Criterion,
    pub nominal_level: f64,
    pub draws: usize,
    pub include_noise: bool,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            criterion: Criterion::LogScore,
            nominal_level: 0.9,
            draws: DEFAULT_CALIBRATION_DRAWS,
            include_noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub grid: AlphaGrid,
    /// Criterion value per grid point (higher is better).
    pub scores: Vec<f64>,
    pub log_scores: Vec<f64>,
    pub coverages: Vec<f64>,
    pub alpha_hat: f64,
    pub selected_index: usize,
    pub criterion: Criterion,
    pub nominal_level: f64,
}

/// Index of the best score. Near-ties go to the lowest index, i.e. the
/// smallest α on an increasing grid. NaN scores never win.
pub fn select_index(scores: &[f64]) -> Option<usize> {
    let best = scores.iter().copied().filter(|s| !s.is_nan()).reduce(f64::max)?;
    scores.iter().position(|&s| s >= best || best - s <= TIE_TOLERANCE)
}

fn criterion_value(criterion: Criterion, log_score: f64, coverage: f64, nominal: f64) -> f64 {
    match criterion {
        Criterion::LogScore => log_score,
        Criterion::Coverage => -(coverage - nominal).abs(),
    }
}

/// Draws for every grid point; point `k` uses its own child seed so the
/// score curve is not correlated across α.
pub fn grid_draws<T: Real>(
    pack: &InfluencePack<'_, T>,
    grid: &AlphaGrid,
    draws: usize,
    seed: Seed,
) -> Result<Vec<ParameterDraws<T>>> {
    grid.values()
        .par_iter()
        .enumerate()
        .map(|(k, &a)| ParameterDraws::generate(pack, a, draws, seed.child(Domain::Grid, k as u64)))
        .collect()
}

/// Tunes α on a validation partition.
pub fn tune_alpha<T: Real>(
    model: &FittedModel<T>,
    pack: &InfluencePack<'_, T>,
    val: &Dataset<T>,
    grid: &AlphaGrid,
    settings: &TuneSettings,
    seed: Seed,
) -> Result<CalibrationResult> {
    if val.is_empty() {
        return Err(invalid("validation set is empty"));
    }
    if grid.is_empty() {
        return Err(invalid("alpha grid is empty"));
    }
    val.require_role(Partition::Validation)?;
    let draws = grid_draws(pack, grid, settings.draws, seed)?;
    let rows = draws
        .par_iter()
        .enumerate()
        .map(|(k, d)| {
            let ens = d.ensembles_for(model, val)?;
            let s = score_held_out(
                &ens,
                val,
                settings.nominal_level,
                settings.include_noise,
                seed.child(Domain::Noise, k as u64),
            )?;
            Ok((s.log_score.to_f64_lossy(), s.coverage))
        })
        .collect::<Result<Vec<_>>>()?;
    let (log_scores, coverages): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let scores: Vec<f64> = log_scores
        .iter()
        .zip(&coverages)
        .map(|(&l, &c)| criterion_value(settings.criterion, l, c, settings.nominal_level))
        .collect();
    let selected_index = select_index(&scores).ok_or_else(|| invalid("every grid score is NaN"))?;
    Ok(CalibrationResult {
        alpha_hat: grid.values()[selected_index],
        grid: grid.clone(),
        scores,
        log_scores,
        coverages,
        selected_index,
        criterion: settings.criterion,
        nominal_level: settings.nominal_level,
    })
}

/// Mean and spread of `|S_val(α̂) − S_test(α̂)|` for one validation size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub m: usize,
    pub mean_gap: f64,
    pub sd_gap: f64,
}

/// Validation/test log-score gap at the tuned α as the validation size grows.
///
/// Draws and test scores are computed once per grid point. Each replication
/// asks `source(m, seed)` for a fresh validation set of size `m`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_diagnostic<T, F>(
    model: &FittedModel<T>,
    pack: &InfluencePack<'_, T>,
    grid: &AlphaGrid,
    val_sizes: &[usize],
    test: &Dataset<T>,
    replications: usize,
    draws: usize,
    source: F,
    seed: Seed,
) -> Result<Vec<GapRow>>
where
    T: Real,
    F: Fn(usize, Seed) -> Result<Dataset<T>> + Sync,
{
    if val_sizes.is_empty() || val_sizes.contains(&0) {
        return Err(invalid("validation sizes must be a nonempty list of positive integers"));
    }
    if val_sizes.windows(2).any(|p| p[0] >= p[1]) {
        return Err(invalid("validation sizes must be increasing"));
    }
    if replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    if test.is_empty() {
        return Err(invalid("test set is empty"));
    }
    let grid_draws = grid_draws(pack, grid, draws, seed)?;
    let test_scores = grid_draws.iter().map(|d| log_score_on(model, d, test)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(val_sizes.len());
    for (j, &m) in val_sizes.iter().enumerate() {
        let gaps = (0..replications)
            .into_par_iter()
            .map(|r| {
                let rep_seed = seed.child(Domain::Replication, (j * replications + r) as u64);
                let val = source(m, rep_seed)?;
                let val_scores = grid_draws.iter().map(|d| log_score_on(model, d, &val)).collect::<Result<Vec<_>>>()?;
                let k = select_index(&val_scores).ok_or_else(|| invalid("every grid score is NaN"))?;
                Ok((val_scores[k] - test_scores[k]).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_gap = gaps.iter().sum::<f64>() / replications as f64;
        let sd_gap = if replications > 1 { crate::data::sample_sd(&gaps) } else { 0.0 };
        rows.push(GapRow { m, mean_gap, sd_gap });
    }
    Ok(rows)
}

fn log_score_on<T: Real>(model: &FittedModel<T>, draws: &ParameterDraws<T>, data: &Dataset<T>) -> Result<f64> {
    let ens: Vec<PredictiveEnsemble<T>> = draws.ensembles_for(model, data)?;
    Ok(average_log_score(&ens, data.targets().as_slice())?.to_f64_lossy())
}
