//! Parametric predictors `g(x; θ)` in internal (possibly standardized) units.
//!
//! Parameter layout of the one-hidden-layer network with `h` hidden units and
//! `p` inputs: input weights row-major (`h × p`), hidden biases (`h`), output
//! weights (`h`), output bias (1).

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Affine maps from raw to internal units: `x̃ = (x - shift) / scale` per
/// input column and `y = y_shift + y_scale · g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Real> {
    pub x_shift: Vec<T>,
    pub x_scale: Vec<T>,
    pub y_shift: T,
    pub y_scale: T,
}

impl<T: Real> Standardizer<T> {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            x_shift: vec![T::zero(); input_dim],
            x_scale: vec![T::one(); input_dim],
            y_shift: T::zero(),
            y_scale: T::one(),
        }
    }

    /// Zero mean, unit variance on the given inputs and targets. Constant
    /// columns keep unit scale.
    pub fn fit(inputs: &DMatrix<T>, targets: &DVector<T>) -> Self {
        let p = inputs.ncols();
        let mut x_shift = Vec::with_capacity(p);
        let mut x_scale = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<T> = inputs.column(j).iter().copied().collect();
            x_shift.push(crate::data::mean(&col));
            x_scale.push(nonzero(crate::data::sample_sd(&col)));
        }
        let ys = targets.as_slice();
        Self { x_shift, x_scale, y_shift: crate::data::mean(ys), y_scale: nonzero(crate::data::sample_sd(ys)) }
    }

    pub fn internal_target(&self, y: T) -> T {
        (y - self.y_shift) / self.y_scale
    }
}

fn nonzero<T: Real>(s: T) -> T {
    if s > T::zero() && s.is_finite() {
        s
    } else {
        T::one()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net<T: Real> {
    Linear { input_dim: usize, intercept: bool },
    Mlp { input_dim: usize, hidden: usize, scaling: Standardizer<T> },
}

impl<T: Real> Net<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            Net::Linear { input_dim, .. } | Net::Mlp { input_dim, .. } => *input_dim,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Net::Linear { input_dim, intercept } => input_dim + usize::from(*intercept),
            Net::Mlp { input_dim, hidden, .. } => hidden * input_dim + 2 * hidden + 1,
        }
    }

    /// `(y_shift, y_scale)` of the output map.
    pub fn output_map(&self) -> (T, T) {
        match self {
            Net::Linear { .. } => (T::zero(), T::one()),
            Net::Mlp { scaling, .. } => (scaling.y_shift, scaling.y_scale),
        }
    }

    pub fn internal_target(&self, y: T) -> T {
        let (shift, scale) = self.output_map();
        (y - shift) / scale
    }

    /// Index of the intercept parameter, excluded from ridge penalties.
    pub fn intercept_index(&self) -> Option<usize> {
        match self {
            Net::Linear { input_dim, intercept: true } => Some(*input_dim),
            _ => None,
        }
    }

    fn standardized(&self, x: &[T]) -> Vec<T> {
        match self {
            Net::Linear { .. } => x.to_vec(),
            Net::Mlp { scaling, .. } => {
                x.iter().zip(scaling.x_shift.iter().zip(&scaling.x_scale)).map(|(&v, (&m, &s))| (v - m) / s).collect()
            }
        }
    }

    /// Internal output `g(x; θ)`.
    pub fn eval(&self, theta: &[T], x: &[T]) -> T {
        match self {
            Net::Linear { input_dim, intercept } => {
                let mut out = dot(&theta[..*input_dim], x);
                if *intercept {
                    out += theta[*input_dim];
                }
                out
            }
            Net::Mlp { input_dim, hidden, .. } => {
                let xs = self.standardized(x);
                mlp_forward(theta, &xs, *input_dim, *hidden, None)
            }
        }
    }

    /// Internal output and its parameter gradient, written into `grad`.
    pub fn eval_grad(&self, theta: &[T], x: &[T], grad: &mut [T]) -> T {
        match self {
            Net::Linear { input_dim, intercept } => {
                grad[..*input_dim].copy_from_slice(x);
                if *intercept {
                    grad[*input_dim] = T::one();
                }
                self.eval(theta, x)
            }
            Net::Mlp { input_dim, hidden, .. } => {
                let xs = self.standardized(x);
                let (p, h) = (*input_dim, *hidden);
                let (wb, rest) = theta.split_at(h * p);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                let mut out = b2[0];
                let off_b1 = h * p;
                let off_w2 = off_b1 + h;
                for k in 0..h {
                    let a = dot(&wb[k * p..(k + 1) * p], &xs) + b1[k];
                    let t = a.tanh();
                    let s = T::one() - t * t;
                    out += w2[k] * t;
                    let back = w2[k] * s;
                    for j in 0..p {
                        grad[k * p + j] = back * xs[j];
                    }
                    grad[off_b1 + k] = back;
                    grad[off_w2 + k] = t;
                }
                grad[off_w2 + h] = T::one();
                out
            }
        }
    }

    /// Second derivative of the internal output with respect to θ. Zero for
    /// the linear model.
    pub fn eval_hessian(&self, theta: &[T], x: &[T]) -> DMatrix<T> {
        let d = self.n_params();
        let mut hess = DMatrix::zeros(d, d);
        if let Net::Mlp { input_dim, hidden, .. } = self {
            let xs = self.standardized(x);
            let (p, h) = (*input_dim, *hidden);
            let off_b1 = h * p;
            let off_w2 = off_b1 + h;
            let two = T::lit(2.0);
            for k in 0..h {
                let a = dot(&theta[k * p..(k + 1) * p], &xs) + theta[off_b1 + k];
                let t = a.tanh();
                let s = T::one() - t * t;
                let curv = -two * t * s * theta[off_w2 + k];
                // first-layer coordinates of unit k: weights then bias (input 1)
                let coords: Vec<(usize, T)> =
                    (0..p).map(|j| (k * p + j, xs[j])).chain(std::iter::once((off_b1 + k, T::one()))).collect();
                for &(ia, xa) in &coords {
                    for &(ib, xb) in &coords {
                        hess[(ia, ib)] += curv * xa * xb;
                    }
                    hess[(ia, off_w2 + k)] += s * xa;
                    hess[(off_w2 + k, ia)] += s * xa;
                }
            }
        }
        hess
    }

    /// Network output with input-to-hidden weights multiplied entrywise by
    /// `mask_scale` (used by inference-time dropout).
    pub fn eval_masked(&self, theta: &[T], x: &[T], mask_scale: &[T]) -> Option<T> {
        match self {
            Net::Mlp { input_dim, hidden, .. } => {
                let xs = self.standardized(x);
                Some(mlp_forward(theta, &xs, *input_dim, *hidden, Some(mask_scale)))
            }
            Net::Linear { .. } => None,
        }
    }
}

fn mlp_forward<T: Real>(theta: &[T], xs: &[T], p: usize, h: usize, mask: Option<&[T]>) -> T {
    let off_b1 = h * p;
    let off_w2 = off_b1 + h;
    let mut out = theta[off_w2 + h];
    for k in 0..h {
        let row = &theta[k * p..(k + 1) * p];
        let inner = match mask {
            Some(m) => {
                let mrow = &m[k * p..(k + 1) * p];
                (0..p).fold(T::zero(), |acc, j| acc + row[j] * mrow[j] * xs[j])
            }
            None => dot(row, xs),
        };
        let a = theta[off_b1 + k] + inner;
        out += theta[off_w2 + k] * a.tanh();
    }
    out
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&u, &v)| acc + u * v)
}
