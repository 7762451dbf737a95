//! Dirichlet reweighting of the training set and its first-order effect on
//! the fitted parameters.
//!
//! For weights `w` on the simplex the reweighted minimizer is approximated by
//! `θ̂_w ≈ θ̂ − H⁻¹ Σ_i (w_i − 1/n) ∇ℓ(z_i, θ̂)`, and predictions by
//! `f(x, θ̂) + ∇f(x, θ̂)ᵀ (θ̂_w − θ̂)`. [`retrain_oracle`] solves the weighted
//! problem exactly and serves as ground truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Partition};
use crate::error::{invalid, shape, Result};
use crate::models::{
    fit_erm, minimize_weighted, weighted_linear_solve, FittedModel, HessianApprox, ModelKind, ModelSpec,
    ParameterVector, ORACLE_MAX_ITER,
};
use crate::rng::Seed;
use crate::scalar::Real;

/// One draw from `Dirichlet(α, …, α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T: Real> {
    w: Vec<T>,
    alpha: f64,
}

impl<T: Real> WeightVector<T> {
    /// Wraps explicit weights; they must be nonnegative and sum to one.
    pub fn new(w: Vec<T>, alpha: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(invalid("weight vector is empty"));
        }
        if w.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total = w.iter().fold(T::zero(), |a, &b| a + b);
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::EPSILON * T::from_usize_lossy(w.len()));
        if (total - T::one()).abs() > tol {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { w, alpha })
    }

    pub fn uniform(n: usize) -> Self {
        Self { w: vec![T::one() / T::from_usize_lossy(n); n], alpha: f64::INFINITY }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `log G` for `G ~ Gamma(shape, 1)`: Marsaglia–Tsang squeeze for
/// `shape ≥ 1`, and `G(shape + 1) · U^{1/shape}` in log space below one so
/// tiny shapes cannot underflow.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>();
        // random() is in [0, 1); map to (0, 1]
        let u = 1.0 - u;
        return sample_log_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// Draws `w ~ Dirichlet(α·1_n)` by normalizing independent Gamma(α, 1) variates.
pub fn sample_dirichlet<T: Real, R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<WeightVector<T>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid(format!("Dirichlet concentration must be positive, got {alpha}")));
    }
    if n == 0 {
        return Err(invalid("Dirichlet dimension must be >= 1"));
    }
    let logs: Vec<f64> = (0..n).map(|_| sample_log_gamma(alpha, rng)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let w = unnorm.into_iter().map(|v| T::lit(v / total)).collect();
    Ok(WeightVector { w, alpha })
}

/// Stored gradients and Hessian of a fitted model.
#[derive(Debug, Clone, Copy)]
pub struct InfluencePack<'a, T: Real> {
    grads: &'a DMatrix<T>,
    hessian: &'a HessianApprox<T>,
}

impl<'a, T: Real> InfluencePack<'a, T> {
    pub fn from_model(model: &'a FittedModel<T>) -> Self {
        Self { grads: model.per_sample_grads(), hessian: model.hessian() }
    }

    pub fn new(grads: &'a DMatrix<T>, hessian: &'a HessianApprox<T>) -> Result<Self> {
        if grads.ncols() != hessian.dim() {
            return Err(shape("gradient columns do not match the Hessian dimension"));
        }
        Ok(Self { grads, hessian })
    }

    pub fn n(&self) -> usize {
        self.grads.nrows()
    }

    pub fn dim(&self) -> usize {
        self.grads.ncols()
    }

    /// `θ̂_w − θ̂ = −(H + λI)⁻¹ Σ_i (w_i − 1/n) g_i`.
    pub fn parameter_shift(&self, w: &WeightVector<T>) -> Result<DVector<T>> {
        let n = self.n();
        if w.len() != n {
            return Err(shape(format!("weight vector has length {}, pack has {n} rows", w.len())));
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let centered = DVector::from_iterator(n, w.as_slice().iter().map(|&wi| wi - inv_n));
        let v = self.grads.tr_mul(&centered);
        Ok(-self.hessian.influence_solve(&v))
    }
}

/// Influence-function estimate of the reweighted minimizer.
pub fn perturb_parameters<T: Real>(
    pack: &InfluencePack<'_, T>,
    theta_hat: &ParameterVector<T>,
    w: &WeightVector<T>,
) -> Result<ParameterVector<T>> {
    if theta_hat.len() != pack.dim() {
        return Err(shape("parameter vector does not match the pack dimension"));
    }
    let shift = pack.parameter_shift(w)?;
    ParameterVector::new(theta_hat.values() + shift)
}

/// `f(x, θ̂) + ∇f(x, θ̂)ᵀ(θ_w − θ̂)`; the model is never evaluated at `θ_w`.
pub fn linearized_prediction<T: Real>(model: &FittedModel<T>, x: &[T], theta_w: &ParameterVector<T>) -> Result<T> {
    if theta_w.len() != model.n_params() {
        return Err(shape("perturbed parameters do not match the model"));
    }
    let base = model.predict(x)?;
    let grad = model.prediction_gradient(x)?;
    let delta = theta_w.values() - model.theta_hat().values();
    Ok(base + grad.dot(&delta))
}

/// Exact minimizer of `Σ w_i ℓ(z_i, θ)`; the network is warm-started at a
/// fresh unweighted fit.
pub fn retrain_oracle<T: Real>(
    spec: &ModelSpec,
    train: &Dataset<T>,
    w: &WeightVector<T>,
    seed: Seed,
) -> Result<ParameterVector<T>> {
    match spec.kind {
        ModelKind::Mlp => {
            let base = fit_erm(spec, train, seed)?;
            retrain_from(&base, train, w)
        }
        ModelKind::Linear | ModelKind::Ridge => {
            spec.validate()?;
            train.require_role(Partition::Train)?;
            check_weights(train, w)?;
            ParameterVector::new(weighted_linear_solve(spec, &spec.build_net(train), train, w.as_slice())?)
        }
    }
}

/// Weighted refit starting from `model`'s minimizer (closed form for the
/// linear models).
pub fn retrain_from<T: Real>(
    model: &FittedModel<T>,
    train: &Dataset<T>,
    w: &WeightVector<T>,
) -> Result<ParameterVector<T>> {
    check_weights(train, w)?;
    if train.len() != model.n_train() {
        return Err(shape("training set does not match the fitted model"));
    }
    let spec = model.spec();
    let theta = match spec.kind {
        ModelKind::Linear | ModelKind::Ridge => weighted_linear_solve(spec, model.net(), train, w.as_slice())?,
        ModelKind::Mlp => minimize_weighted(
            spec,
            model.net(),
            train,
            w.as_slice(),
            model.theta_hat().values().clone(),
            ORACLE_MAX_ITER,
        )?,
    };
    ParameterVector::new(theta)
}

fn check_weights<T: Real>(train: &Dataset<T>, w: &WeightVector<T>) -> Result<()> {
    if w.len() != train.len() {
        return Err(shape(format!("weight vector has length {}, training set has {}", w.len(), train.len())));
    }
    Ok(())
}
