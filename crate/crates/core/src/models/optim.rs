//! Full-batch quasi-Newton (L-BFGS) minimization with Armijo backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub max_iter: usize,
    /// Stop as soon as the gradient norm reaches this.
    pub grad_tol: f64,
    /// If the budget runs out or the line search stalls, the point still
    /// counts as converged when its gradient norm is at most this.
    pub accept_tol: f64,
    pub memory: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome<T: Real> {
    pub theta: DVector<T>,
    pub iterations: usize,
    pub grad_norm: T,
}

/// Minimizes `objective` (returning value and gradient) from `start` until the
/// gradient norm drops to `grad_tol`, falling back to `accept_tol`.
pub fn minimize<T, F>(mut objective: F, start: DVector<T>, settings: Settings) -> Result<Outcome<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> (T, DVector<T>),
{
    let tol = T::lit(settings.grad_tol);
    let accept = T::lit(settings.accept_tol.max(settings.grad_tol));
    let c1 = T::lit(1e-4);
    let mut theta = start;
    let (mut value, mut grad) = objective(&theta);
    let mut history: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::with_capacity(settings.memory);

    for iter in 0..settings.max_iter {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(Outcome { theta, iterations: iter, grad_norm: gnorm });
        }
        let mut direction = two_loop(&grad, &history);
        let mut slope = grad.dot(&direction);
        if slope >= T::zero() || !slope.is_finite() {
            history.clear();
            direction = -&grad;
            slope = -gnorm * gnorm;
        }
        // first step after a reset is scaled to unit length
        let mut step = if history.is_empty() { T::one().min(T::one() / gnorm) } else { T::one() };
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &theta + &direction * step;
            let (v, g) = objective(&trial);
            if v.is_finite() && v <= value + c1 * step * slope {
                accepted = Some((trial, v, g));
                break;
            }
            step *= T::lit(0.5);
        }
        let Some((next, next_value, next_grad)) = accepted else {
            if history.is_empty() {
                if gnorm <= accept {
                    return Ok(Outcome { theta, iterations: iter, grad_norm: gnorm });
                }
                return Err(Error::ConvergenceFailure { iterations: iter, grad_norm: gnorm.to_f64_lossy() });
            }
            history.clear();
            continue;
        };
        let s = &next - &theta;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > T::EPSILON * s.norm() * y.norm() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }
        theta = next;
        value = next_value;
        grad = next_grad;
    }
    let gnorm = grad.norm();
    if gnorm <= accept {
        Ok(Outcome { theta, iterations: settings.max_iter, grad_norm: gnorm })
    } else {
        Err(Error::ConvergenceFailure { iterations: settings.max_iter, grad_norm: gnorm.to_f64_lossy() })
    }
}

fn two_loop<T: Real>(grad: &DVector<T>, history: &VecDeque<(DVector<T>, DVector<T>, T)>) -> DVector<T> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * s.dot(&q);
        q.axpy(-a, y, T::one());
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = s.dot(y) / y.dot(y);
        q *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * y.dot(&q);
        q.axpy(a - b, s, T::one());
    }
    -q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (v, g)
        };
        let out = minimize(
            f,
            DVector::from_vec(vec![-1.2, 1.0]),
            Settings { max_iter: 1000, grad_tol: 1e-8, accept_tol: 1e-8, memory: 8 },
        )
        .unwrap();
        assert!((out.theta[0] - 1.0).abs() < 1e-6);
        assert!((out.theta[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reports_non_convergence() {
        let f = |x: &DVector<f64>| (x[0] * x[0], DVector::from_vec(vec![2.0 * x[0]]));
        let err = minimize(
            f,
            DVector::from_vec(vec![5.0]),
            Settings { max_iter: 0, grad_tol: 1e-8, accept_tol: 1e-8, memory: 3 },
        );
        assert!(matches!(err, Err(Error::ConvergenceFailure { .. })));
    }

    #[test]
    fn loose_tolerance_accepts_unfinished_runs() {
        let f = |x: &DVector<f64>| (0.5 * x[0] * x[0], DVector::from_vec(vec![x[0]]));
        let strict = Settings { max_iter: 0, grad_tol: 1e-8, accept_tol: 1e-8, memory: 3 };
        assert!(minimize(f, DVector::from_vec(vec![1e-3]), strict).is_err());
        let loose = Settings { accept_tol: 1e-2, ..strict };
        let out = minimize(f, DVector::from_vec(vec![1e-3]), loose).unwrap();
        assert_eq!(out.theta[0], 1e-3);
    }
}
