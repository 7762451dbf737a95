//! Monte Carlo dropout baseline on the fitted network.
//!
//! Each pass drops entries of the input-to-hidden weight matrix with
//! probability `p` and rescales the survivors by `1/(1 − p)`. Biases and
//! output weights are never masked, and the network is trained without
//! dropout.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, shape, Error, Result};
use crate::models::FittedModel;
use crate::predictive::{bandwidth_floor, PredictiveEnsemble};
use crate::rng::{Domain, Seed};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Drop probability in `[0, 1)`.
    pub p: f64,
    /// Forward passes per query point.
    pub passes: usize,
    pub seed: Seed,
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(invalid(format!("dropout probability must lie in [0, 1), got {}", self.p)));
        }
        if self.passes == 0 {
            return Err(invalid("need at least one forward pass"));
        }
        Ok(())
    }
}

/// One stochastic forward pass with a fresh mask drawn from `rng`.
pub fn masked_forward<T: Real, R: Rng + ?Sized>(model: &FittedModel<T>, x: &[T], p: f64, rng: &mut R) -> Result<T> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    let Some(s) = model.standardizer() else {
        return Err(Error::UnsupportedModel("MC dropout needs an mlp model".into()));
    };
    if x.len() != model.input_dim() {
        return Err(shape(format!("expected {} inputs, got {}", model.input_dim(), x.len())));
    }
    let entries = model.input_dim() * model.spec().hidden_width;
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> =
        (0..entries).map(|_| if p > 0.0 && rng.random::<f64>() < p { T::zero() } else { keep }).collect();
    let g = model
        .net()
        .eval_masked(model.theta_hat().as_slice(), x, &mask)
        .ok_or_else(|| Error::UnsupportedModel("MC dropout needs an mlp model".into()))?;
    Ok(s.y_shift + s.y_scale * g)
}

/// `cfg.passes` masked outputs at `x`; pass `t` draws its mask from stream
/// `t` of `cfg.seed`.
pub fn dropout_samples<T: Real>(model: &FittedModel<T>, x: &[T], cfg: &DropoutConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    (0..cfg.passes)
        .into_par_iter()
        .map(|t| masked_forward(model, x, cfg.p, &mut cfg.seed.stream(Domain::Dropout, t as u64)))
        .collect()
}

/// Dropout draws packaged with the model's `σ̂`, so intervals and log-scores
/// apply unchanged.
pub fn dropout_ensemble<T: Real>(
    model: &FittedModel<T>,
    x: &[T],
    cfg: &DropoutConfig,
) -> Result<PredictiveEnsemble<T>> {
    let samples = dropout_samples(model, x, cfg)?;
    PredictiveEnsemble::new(samples, model.sigma_hat(), bandwidth_floor(model), 0.0, x.to_vec())
}

/// One ensemble per row of `data`; row `i` uses the child seed
/// `cfg.seed.child(Dropout, i)`.
pub fn dropout_ensembles_for<T: Real>(
    model: &FittedModel<T>,
    data: &Dataset<T>,
    cfg: &DropoutConfig,
) -> Result<Vec<PredictiveEnsemble<T>>> {
    cfg.validate()?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let row_cfg = DropoutConfig { seed: cfg.seed.child(Domain::Dropout, i as u64), ..*cfg };
            dropout_ensemble(model, &data.input_vec(i), &row_cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests;
