use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::linalg::{pivot_ratio, refined_solve, symmetrize};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    Exact,
    GaussNewton,
    Diagonal,
}

/// How much `λ` to add before factorizing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Use exactly this `λ`.
    Fixed(f64),
    /// Undamped when the factorization is numerically sound, otherwise
    /// `λ = max(1e-8, 1e-6 · tr(H)/d)`, doubled up to 20 times until the
    /// factorization succeeds.
    Auto,
}

const MAX_DOUBLINGS: usize = 20;

#[derive(Debug, Clone)]
enum Factor<T: Real> {
    Dense { chol: Cholesky<T, Dyn>, damped: DMatrix<T> },
    Diagonal(DVector<T>),
}

/// A factorized `H + λI` for influence solves.
#[derive(Debug, Clone)]
pub struct HessianApprox<T: Real> {
    mode: HessianMode,
    matrix: DMatrix<T>,
    damping: T,
    factor: Factor<T>,
}

impl<T: Real> HessianApprox<T> {
    /// Factorizes a symmetric matrix. In diagonal mode only the diagonal of
    /// `matrix` is used.
    pub fn new(matrix: DMatrix<T>, mode: HessianMode, damping: Damping) -> Result<Self> {
        let d = matrix.nrows();
        assert_eq!(d, matrix.ncols(), "Hessian must be square");
        let matrix = if mode == HessianMode::Diagonal { DMatrix::from_diagonal(&matrix.diagonal()) } else { matrix };
        let try_factor = |lambda: T| -> Option<Factor<T>> {
            if mode == HessianMode::Diagonal {
                let diag = matrix.diagonal().map(|v| v + lambda);
                diag.iter().all(|&v| v > T::zero() && v.is_finite()).then_some(Factor::Diagonal(diag))
            } else {
                let mut damped = matrix.clone();
                for i in 0..d {
                    damped[(i, i)] += lambda;
                }
                Cholesky::new(damped.clone()).map(|chol| Factor::Dense { chol, damped })
            }
        };

        match damping {
            Damping::Fixed(lambda) => {
                let lambda = T::lit(lambda);
                let factor = try_factor(lambda).ok_or(Error::IllConditioned { damping: lambda.to_f64_lossy() })?;
                Ok(Self { mode, matrix, damping: lambda, factor })
            }
            Damping::Auto => {
                if let Some(factor) = try_factor(T::zero()) {
                    if factor_ratio(&factor) >= T::EPSILON.sqrt() {
                        return Ok(Self { mode, matrix, damping: T::zero(), factor });
                    }
                }
                let trace = matrix.trace();
                let scale = if d > 0 { trace / T::from_usize_lossy(d) } else { T::zero() };
                let mut lambda = T::lit(1e-8).max(T::lit(1e-6) * scale);
                for _ in 0..=MAX_DOUBLINGS {
                    if let Some(factor) = try_factor(lambda) {
                        return Ok(Self { mode, matrix, damping: lambda, factor });
                    }
                    lambda *= T::lit(2.0);
                }
                Err(Error::IllConditioned { damping: (lambda * T::lit(0.5)).to_f64_lossy() })
            }
        }
    }

    pub fn mode(&self) -> HessianMode {
        self.mode
    }

    /// The undamped matrix `H` (diagonal in diagonal mode).
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn damping(&self) -> T {
        self.damping
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `(H + λI) u = v`.
    pub fn influence_solve(&self, v: &DVector<T>) -> DVector<T> {
        assert_eq!(v.len(), self.dim(), "right-hand side dimension");
        match &self.factor {
            Factor::Diagonal(diag) => v.component_div(diag),
            Factor::Dense { chol, damped } => refined_solve(damped, v, |b| chol.solve(b)),
        }
    }

    /// Applies `H + λI` to `u`.
    pub fn apply_damped(&self, u: &DVector<T>) -> DVector<T> {
        &self.matrix * u + u * self.damping
    }
}

fn factor_ratio<T: Real>(factor: &Factor<T>) -> T {
    match factor {
        Factor::Dense { chol, .. } => pivot_ratio(chol),
        Factor::Diagonal(diag) => {
            let lo = diag.iter().copied().fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b));
            let hi = diag.iter().copied().fold(T::zero(), |a, b| a.max(b));
            if hi > T::zero() {
                lo / hi
            } else {
                T::one()
            }
        }
    }
}

/// Builds the requested Hessian of the mean loss from per-sample Jacobian
/// rows `∇g_i`, residuals `r_i` and per-sample output curvatures.
pub(crate) fn assemble<T: Real>(
    mode: HessianMode,
    jacobian: &DMatrix<T>,
    residual_curvature: Option<DMatrix<T>>,
    penalty_diag: &DVector<T>,
) -> DMatrix<T> {
    let n = T::from_usize_lossy(jacobian.nrows().max(1));
    let mut h = jacobian.tr_mul(jacobian) / n;
    if mode == HessianMode::Exact {
        if let Some(c) = residual_curvature {
            h -= c / n;
        }
    }
    for i in 0..h.nrows() {
        h[(i, i)] += penalty_diag[i];
    }
    symmetrize(&mut h);
    if mode == HessianMode::Diagonal {
        h = DMatrix::from_diagonal(&h.diagonal());
    }
    h
}
