//! Differentiable base predictors: linear and ridge regression and a
//! one-hidden-layer tanh network, all trained under squared error
//! `ℓ(z, θ) = ½ (y − f(x, θ))²`.
//!
//! A [`FittedModel`] caches everything the influence approximation needs:
//! the minimizer `θ̂`, the per-sample loss gradients at `θ̂` and a factorized
//! Hessian of the mean loss.

mod hessian;
mod linalg;
pub(crate) mod net;
pub mod optim;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use hessian::{Damping, HessianApprox, HessianMode};
use linalg::{refined_solve, Equilibrated};
use net::Net;
pub use net::Standardizer;

use crate::data::{Dataset, Partition};
use crate::error::{invalid, shape, Error, Result};
use crate::rng::{Domain, Seed};
use crate::scalar::Real;

/// Iteration cap for fitting the network from scratch.
pub const MLP_MAX_ITER: usize = 5000;
/// Iteration cap for warm-started weighted refits.
pub const ORACLE_MAX_ITER: usize = 2000;
/// Network fits finish with Newton steps toward this gradient norm; a fit
/// whose Newton steps stall keeps its quasi-Newton point, which meets the
/// stationarity tolerance.
pub const POLISH_GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Ridge,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Ridge penalty; only read for [`ModelKind::Ridge`].
    pub ridge_lambda: f64,
    /// L2 penalty on the network weights (not biases), in standardized
    /// units; only read for [`ModelKind::Mlp`].
    #[serde(default)]
    pub weight_decay: f64,
    /// Hidden units; only read for [`ModelKind::Mlp`].
    pub hidden_width: usize,
    pub activation: Activation,
    pub fit_intercept: bool,
    /// Overrides the kind's default Hessian approximation.
    pub hessian_mode: Option<HessianMode>,
}

impl ModelSpec {
    pub fn linear(fit_intercept: bool) -> Self {
        Self {
            kind: ModelKind::Linear,
            ridge_lambda: 0.0,
            weight_decay: 0.0,
            hidden_width: 1,
            activation: Activation::Tanh,
            fit_intercept,
            hessian_mode: None,
        }
    }

    /// Intercept-only model: the fitted parameter is the sample mean.
    pub fn scalar_mean() -> Self {
        Self::linear(true)
    }

    pub fn ridge(lambda: f64, fit_intercept: bool) -> Self {
        Self { kind: ModelKind::Ridge, ridge_lambda: lambda, ..Self::linear(fit_intercept) }
    }

    pub fn mlp(hidden_width: usize) -> Self {
        Self { kind: ModelKind::Mlp, hidden_width, fit_intercept: true, ..Self::linear(true) }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_hessian_mode(mut self, mode: HessianMode) -> Self {
        self.hessian_mode = Some(mode);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(invalid(format!("ridge_lambda must be finite and >= 0, got {}", self.ridge_lambda)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay)));
        }
        if self.hidden_width == 0 {
            return Err(invalid("hidden_width must be >= 1"));
        }
        Ok(())
    }

    /// Exact curvature for the linear models, Gauss-Newton for the network.
    pub fn effective_hessian_mode(&self) -> HessianMode {
        self.hessian_mode.unwrap_or(match self.kind {
            ModelKind::Mlp => HessianMode::GaussNewton,
            ModelKind::Linear | ModelKind::Ridge => HessianMode::Exact,
        })
    }

    fn penalty(&self) -> f64 {
        match self.kind {
            ModelKind::Ridge => self.ridge_lambda,
            ModelKind::Mlp => self.weight_decay,
            ModelKind::Linear => 0.0,
        }
    }

    /// Gradient-norm tolerance the fitted minimizer satisfies.
    pub fn stationarity_tolerance<T: Real>(&self) -> T {
        let floor = T::lit(1e3) * T::EPSILON;
        match self.kind {
            ModelKind::Mlp => T::lit(1e-4).max(floor),
            _ => T::lit(1e-6).max(floor),
        }
    }

    pub(crate) fn build_net<T: Real>(&self, train: &Dataset<T>) -> Net<T> {
        match self.kind {
            ModelKind::Linear | ModelKind::Ridge => {
                Net::Linear { input_dim: train.input_dim(), intercept: self.fit_intercept }
            }
            ModelKind::Mlp => Net::Mlp {
                input_dim: train.input_dim(),
                hidden: self.hidden_width,
                scaling: Standardizer::fit(train.inputs(), train.targets()),
            },
        }
    }
}

/// Flattened model parameters `θ`; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T: Real>(DVector<T>);

impl<T: Real> ParameterVector<T> {
    pub fn new(values: DVector<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameter vector has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn values(&self) -> &DVector<T> {
        &self.0
    }

    pub fn as_slice(&self) -> &[T] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A trained predictor with the cached influence quantities.
#[derive(Debug, Clone)]
pub struct FittedModel<T: Real> {
    spec: ModelSpec,
    net: Net<T>,
    theta_hat: ParameterVector<T>,
    per_sample_grads: DMatrix<T>,
    hessian: HessianApprox<T>,
    sigma_hat: T,
    n_train: usize,
    target_sd: T,
}

/// Fits the empirical risk minimizer and caches gradients and Hessian.
pub fn fit_erm<T: Real>(spec: &ModelSpec, train: &Dataset<T>, seed: Seed) -> Result<FittedModel<T>> {
    spec.validate()?;
    train.require_role(Partition::Train)?;
    let net = spec.build_net(train);
    let d = net.n_params();
    let n = train.len();
    match spec.kind {
        ModelKind::Linear | ModelKind::Ridge if n < d || n == 0 => {
            return Err(invalid(format!("linear fit needs n >= d, got n = {n}, d = {d}")))
        }
        ModelKind::Mlp if n < 2 => return Err(invalid("network fit needs at least 2 observations")),
        _ => {}
    }
    let uniform = vec![T::one() / T::from_usize_lossy(n); n];
    let theta = match spec.kind {
        ModelKind::Linear | ModelKind::Ridge => weighted_linear_solve(spec, &net, train, &uniform)?,
        ModelKind::Mlp => {
            let start = init_mlp(&net, seed);
            minimize_weighted(spec, &net, train, &uniform, start, MLP_MAX_ITER)?
        }
    };
    FittedModel::assemble(spec.clone(), net, train, ParameterVector::new(theta)?)
}

impl<T: Real> FittedModel<T> {
    /// Wraps explicit parameters without optimizing; gradients, Hessian and
    /// `σ̂` are computed at `theta`.
    pub fn from_parameters(spec: &ModelSpec, train: &Dataset<T>, theta: ParameterVector<T>) -> Result<Self> {
        spec.validate()?;
        let net = spec.build_net(train);
        Self::assemble(spec.clone(), net, train, theta)
    }

    fn assemble(spec: ModelSpec, net: Net<T>, train: &Dataset<T>, theta: ParameterVector<T>) -> Result<Self> {
        let d = net.n_params();
        if theta.len() != d {
            return Err(shape(format!("expected {d} parameters, got {}", theta.len())));
        }
        let n = train.len();
        let th = theta.as_slice();
        let penalty = penalty_diag(&spec, &net);
        let mut jac = DMatrix::zeros(n, d);
        let mut grads = DMatrix::zeros(n, d);
        let mut residuals = Vec::with_capacity(n);
        let mut row = vec![T::zero(); d];
        let (_, y_scale) = net.output_map();
        let mut rss = T::zero();
        for i in 0..n {
            let x = train.input_vec(i);
            let g = net.eval_grad(th, &x, &mut row);
            let r = net.internal_target(train.targets()[i]) - g;
            residuals.push(r);
            let r_raw = r * y_scale;
            rss += r_raw * r_raw;
            for j in 0..d {
                jac[(i, j)] = row[j];
                grads[(i, j)] = -r * row[j] + penalty[j] * th[j];
            }
        }
        let mode = spec.effective_hessian_mode();
        let curvature = (mode == HessianMode::Exact && matches!(net, Net::Mlp { .. }))
            .then(|| residual_curvature(&net, th, train, &residuals));
        let h = hessian::assemble(mode, &jac, curvature, &penalty);
        let hessian = HessianApprox::new(h, mode, Damping::Auto)?;
        let dof = match spec.kind {
            ModelKind::Mlp => n,
            _ => n.saturating_sub(d).max(1),
        };
        let sigma_hat = (rss / T::from_usize_lossy(dof.max(1))).sqrt();
        Ok(Self {
            spec,
            net,
            theta_hat: theta,
            per_sample_grads: grads,
            hessian,
            sigma_hat,
            n_train: n,
            target_sd: train.target_sd(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn theta_hat(&self) -> &ParameterVector<T> {
        &self.theta_hat
    }

    /// Rows are `∇_θ ℓ(z_i, θ̂)`.
    pub fn per_sample_grads(&self) -> &DMatrix<T> {
        &self.per_sample_grads
    }

    pub fn hessian(&self) -> &HessianApprox<T> {
        &self.hessian
    }

    pub fn sigma_hat(&self) -> T {
        self.sigma_hat
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Sample standard deviation of the training targets.
    pub fn target_sd(&self) -> T {
        self.target_sd
    }

    pub fn standardizer(&self) -> Option<&Standardizer<T>> {
        match &self.net {
            Net::Mlp { scaling, .. } => Some(scaling),
            Net::Linear { .. } => None,
        }
    }

    pub(crate) fn net(&self) -> &Net<T> {
        &self.net
    }

    /// Same model with the observation-noise scale replaced.
    pub fn with_sigma_hat(mut self, sigma_hat: T) -> Self {
        self.sigma_hat = sigma_hat.max(T::zero());
        self
    }

    /// Same model with a different Hessian approximation.
    pub fn with_hessian(mut self, hessian: HessianApprox<T>) -> Result<Self> {
        if hessian.dim() != self.n_params() {
            return Err(shape("Hessian dimension does not match the parameter count"));
        }
        self.hessian = hessian;
        Ok(self)
    }

    /// Norm of the mean per-sample gradient.
    pub fn mean_gradient_norm(&self) -> T {
        let n = T::from_usize_lossy(self.n_train.max(1));
        let mean: DVector<T> = self.per_sample_grads.row_sum().transpose() / n;
        mean.norm()
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(shape(format!("input has dimension {}, model expects {}", x.len(), self.input_dim())));
        }
        Ok(())
    }

    /// `f(x, θ̂)`.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.predict_with(self.theta_hat.as_slice(), x)
    }

    /// `f(x, θ)` at arbitrary parameters.
    pub fn predict_with(&self, theta: &[T], x: &[T]) -> Result<T> {
        self.check_input(x)?;
        if theta.len() != self.n_params() {
            return Err(shape(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        let (shift, scale) = self.net.output_map();
        Ok(shift + scale * self.net.eval(theta, x))
    }

    /// `∇_θ f(x, θ̂)`.
    pub fn prediction_gradient(&self, x: &[T]) -> Result<DVector<T>> {
        self.check_input(x)?;
        let mut g = vec![T::zero(); self.n_params()];
        self.net.eval_grad(self.theta_hat.as_slice(), x, &mut g);
        let (_, scale) = self.net.output_map();
        Ok(DVector::from_vec(g) * scale)
    }

    /// Per-sample loss `ℓ(z, θ)` in the model's internal units.
    pub fn sample_loss(&self, theta: &[T], x: &[T], y: T) -> Result<T> {
        self.check_input(x)?;
        let r = self.net.internal_target(y) - self.net.eval(theta, x);
        let penalty = penalty_diag(&self.spec, &self.net);
        let reg = theta.iter().zip(penalty.iter()).fold(T::zero(), |a, (&t, &l)| a + l * t * t);
        Ok(T::lit(0.5) * (r * r + reg))
    }

    /// `∇_θ ℓ(z, θ)` in the model's internal units.
    pub fn sample_loss_gradient(&self, theta: &[T], x: &[T], y: T) -> Result<DVector<T>> {
        self.check_input(x)?;
        let mut g = vec![T::zero(); self.n_params()];
        let out = self.net.eval_grad(theta, x, &mut g);
        let r = self.net.internal_target(y) - out;
        let penalty = penalty_diag(&self.spec, &self.net);
        Ok(DVector::from_fn(g.len(), |j, _| -r * g[j] + penalty[j] * theta[j]))
    }
}

/// Recomputes the Hessian of the mean training loss at `θ̂` in `mode`.
pub fn compute_hessian<T: Real>(
    model: &FittedModel<T>,
    train: &Dataset<T>,
    mode: HessianMode,
) -> Result<HessianApprox<T>> {
    HessianApprox::new(hessian_matrix(model, train, mode)?, mode, Damping::Auto)
}

/// The undamped Hessian of the mean training loss at `θ̂`.
pub fn hessian_matrix<T: Real>(model: &FittedModel<T>, train: &Dataset<T>, mode: HessianMode) -> Result<DMatrix<T>> {
    if train.len() != model.n_train || train.input_dim() != model.input_dim() {
        return Err(shape("training set does not match the fitted model"));
    }
    let net = &model.net;
    let th = model.theta_hat.as_slice();
    let d = net.n_params();
    let mut jac = DMatrix::zeros(train.len(), d);
    let mut row = vec![T::zero(); d];
    let mut residuals = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let g = net.eval_grad(th, &train.input_vec(i), &mut row);
        residuals.push(net.internal_target(train.targets()[i]) - g);
        jac.row_mut(i).copy_from_slice(&row);
    }
    let curvature = (mode == HessianMode::Exact).then(|| residual_curvature(net, th, train, &residuals));
    Ok(hessian::assemble(mode, &jac, curvature, &penalty_diag(&model.spec, net)))
}

/// `Σ_i r_i ∇²g_i`.
fn residual_curvature<T: Real>(net: &Net<T>, theta: &[T], train: &Dataset<T>, residuals: &[T]) -> DMatrix<T> {
    let d = net.n_params();
    let mut acc = DMatrix::zeros(d, d);
    if matches!(net, Net::Linear { .. }) {
        return acc;
    }
    for (i, &r) in residuals.iter().enumerate() {
        acc += net.eval_hessian(theta, &train.input_vec(i)) * r;
    }
    acc
}

fn penalty_diag<T: Real>(spec: &ModelSpec, net: &Net<T>) -> DVector<T> {
    let lambda = T::lit(spec.penalty());
    let mut p = DVector::from_element(net.n_params(), lambda);
    match net {
        Net::Linear { .. } => {
            if let Some(i) = net.intercept_index() {
                p[i] = T::zero();
            }
        }
        // layout [W1 (h×p), b1 (h), w2 (h), b2]
        Net::Mlp { input_dim, hidden, .. } => {
            let w1 = hidden * input_dim;
            p.rows_mut(w1, *hidden).fill(T::zero());
            p[w1 + 2 * hidden] = T::zero();
        }
    }
    p
}

/// Minimizer of `Σ w_i ℓ(z_i, θ)` for the linear models (weights on the simplex).
pub(crate) fn weighted_linear_solve<T: Real>(
    spec: &ModelSpec,
    net: &Net<T>,
    train: &Dataset<T>,
    weights: &[T],
) -> Result<DVector<T>> {
    let d = net.n_params();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    let mut phi = vec![T::zero(); d];
    let zero = vec![T::zero(); d];
    for (i, &w) in weights.iter().enumerate() {
        net.eval_grad(&zero, &train.input_vec(i), &mut phi);
        let y = net.internal_target(train.targets()[i]);
        for r in 0..d {
            b[r] += w * phi[r] * y;
            for c in 0..d {
                a[(r, c)] += w * phi[r] * phi[c];
            }
        }
    }
    let penalty = penalty_diag(spec, net);
    for j in 0..d {
        a[(j, j)] += penalty[j];
    }
    let eq =
        Equilibrated::new(&a).ok_or_else(|| Error::SingularFit("normal equations not positive definite".into()))?;
    if eq.pivot_ratio <= T::lit(10.0) * T::from_usize_lossy(d.max(1)) * T::EPSILON {
        return Err(Error::SingularFit("design matrix is numerically rank deficient".into()));
    }
    Ok(refined_solve(&a, &b, |rhs| eq.solve(rhs)))
}

/// Weighted objective and gradient in internal units.
pub(crate) fn weighted_objective<T: Real>(
    spec: &ModelSpec,
    net: &Net<T>,
    train: &Dataset<T>,
    weights: &[T],
    theta: &DVector<T>,
) -> (T, DVector<T>) {
    let d = net.n_params();
    let th = theta.as_slice();
    let mut grad = DVector::zeros(d);
    let mut row = vec![T::zero(); d];
    let mut value = T::zero();
    let half = T::lit(0.5);
    for (i, &w) in weights.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let g = net.eval_grad(th, &train.input_vec(i), &mut row);
        let r = net.internal_target(train.targets()[i]) - g;
        value += w * half * r * r;
        let coef = -w * r;
        for j in 0..d {
            grad[j] += coef * row[j];
        }
    }
    let penalty = penalty_diag(spec, net);
    for j in 0..d {
        value += half * penalty[j] * th[j] * th[j];
        grad[j] += penalty[j] * th[j];
    }
    (value, grad)
}

pub(crate) fn minimize_weighted<T: Real>(
    spec: &ModelSpec,
    net: &Net<T>,
    train: &Dataset<T>,
    weights: &[T],
    start: DVector<T>,
    max_iter: usize,
) -> Result<DVector<T>> {
    let accept = spec.stationarity_tolerance::<T>();
    let polish = T::lit(POLISH_GRAD_TOL).max(T::lit(1e3) * T::EPSILON).min(accept);
    let objective = |th: &DVector<T>| weighted_objective(spec, net, train, weights, th);
    let coarse =
        optim::Settings { max_iter, grad_tol: accept.to_f64_lossy(), accept_tol: accept.to_f64_lossy(), memory: 10 };
    let out = optim::minimize(objective, start, coarse)?;
    if out.grad_norm <= polish {
        return Ok(out.theta);
    }
    // Newton either finishes the job or the quasi-Newton point stands, so a
    // refit from an already fitted point is a no-op
    Ok(newton_polish(spec, net, train, weights, out.theta.clone(), polish).unwrap_or(out.theta))
}

const NEWTON_STEPS: usize = 50;

/// Levenberg-Marquardt style Newton iterations with the exact weighted
/// Hessian. A step is taken if it lowers the objective, or keeps it level to
/// rounding while shrinking the gradient norm. The shift `μ·max|H_jj|` grows
/// after a rejected step and shrinks after an accepted one. `None` unless the
/// norm reaches `tol`.
fn newton_polish<T: Real>(
    spec: &ModelSpec,
    net: &Net<T>,
    train: &Dataset<T>,
    weights: &[T],
    mut theta: DVector<T>,
    tol: T,
) -> Option<DVector<T>> {
    let (mut value, mut grad) = weighted_objective(spec, net, train, weights, &theta);
    let (lo, hi) = (T::lit(1e-12), T::lit(1e6));
    let mut mu = T::zero();
    for _ in 0..NEWTON_STEPS {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Some(theta);
        }
        let h = weighted_hessian(spec, net, train, weights, &theta);
        let scale = h.diagonal().iter().fold(T::one(), |a, &v| a.max(v.abs()));
        loop {
            let mut shifted = h.clone();
            for j in 0..shifted.nrows() {
                shifted[(j, j)] += mu * scale;
            }
            let accepted = Equilibrated::new(&shifted).and_then(|eq| {
                let trial = &theta - eq.solve(&grad);
                let (v, g) = weighted_objective(spec, net, train, weights, &trial);
                let slack = T::lit(4.0) * T::EPSILON * value.abs();
                (v < value - slack || (v <= value + slack && g.norm() < gnorm)).then_some((trial, v, g))
            });
            if let Some((th, v, g)) = accepted {
                theta = th;
                value = v;
                grad = g;
                mu = if mu <= lo { T::zero() } else { mu * T::lit(0.1) };
                break;
            }
            mu = (mu * T::lit(10.0)).max(lo);
            if mu > hi {
                return None;
            }
        }
    }
    (grad.norm() <= tol).then_some(theta)
}

/// `Σ w_i (∇g_i ∇g_iᵀ − r_i ∇²g_i) + diag(penalty)` in internal units.
fn weighted_hessian<T: Real>(
    spec: &ModelSpec,
    net: &Net<T>,
    train: &Dataset<T>,
    weights: &[T],
    theta: &DVector<T>,
) -> DMatrix<T> {
    let d = net.n_params();
    let th = theta.as_slice();
    let mut h = DMatrix::zeros(d, d);
    let mut row = vec![T::zero(); d];
    for (i, &w) in weights.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let x = train.input_vec(i);
        let r = net.internal_target(train.targets()[i]) - net.eval_grad(th, &x, &mut row);
        let g = DVector::from_column_slice(&row);
        h.ger(w, &g, &g, T::one());
        h -= net.eval_hessian(th, &x) * (w * r);
    }
    let penalty = penalty_diag(spec, net);
    for j in 0..d {
        h[(j, j)] += penalty[j];
    }
    h
}

fn init_mlp<T: Real>(net: &Net<T>, seed: Seed) -> DVector<T> {
    let Net::Mlp { input_dim, hidden, .. } = net else { unreachable!("init_mlp called on a linear model") };
    let (p, h) = (*input_dim, *hidden);
    let mut rng = seed.stream(Domain::Init, 0);
    let mut theta = DVector::zeros(net.n_params());
    let w1 = Normal::new(0.0, 1.0 / (p.max(1) as f64).sqrt()).expect("valid sd");
    let w2 = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid sd");
    for k in 0..h * p {
        theta[k] = T::lit(w1.sample(&mut rng));
    }
    for k in 0..h {
        theta[h * p + h + k] = T::lit(w2.sample(&mut rng));
    }
    theta
}

#[cfg(test)]
mod tests;
