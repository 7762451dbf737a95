//! Small dense SPD helpers shared by the linear fits and the Hessian.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::scalar::Real;

/// Cholesky of `a` together with the ratio of its smallest to largest squared
/// pivot, computed on the Jacobi-equilibrated matrix so that column scaling
/// does not look like rank deficiency.
pub(crate) struct Equilibrated<T: Real> {
    chol: Cholesky<T, Dyn>,
    scale: DVector<T>,
    pub(crate) pivot_ratio: T,
}

impl<T: Real> Equilibrated<T> {
    pub(crate) fn new(a: &DMatrix<T>) -> Option<Self> {
        let d = a.nrows();
        let mut scale = DVector::from_element(d, T::one());
        for i in 0..d {
            let aii = a[(i, i)];
            if aii <= T::zero() || !aii.is_finite() {
                return None;
            }
            scale[i] = T::one() / aii.sqrt();
        }
        let scaled = DMatrix::from_fn(d, d, |i, j| a[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(scaled)?;
        let pivot_ratio = pivot_ratio(&chol);
        Some(Self { chol, scale, pivot_ratio })
    }

    pub(crate) fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let rhs = b.component_mul(&self.scale);
        self.chol.solve(&rhs).component_mul(&self.scale)
    }
}

pub(crate) fn pivot_ratio<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let d = l.nrows();
    if d == 0 {
        return T::one();
    }
    let mut lo = T::max_value().unwrap_or_else(T::one);
    let mut hi = T::zero();
    for i in 0..d {
        let p = l[(i, i)] * l[(i, i)];
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if hi > T::zero() {
        lo / hi
    } else {
        T::zero()
    }
}

/// Solves `a x = b` with two rounds of iterative refinement.
pub(crate) fn refined_solve<T: Real>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    solve: impl Fn(&DVector<T>) -> DVector<T>,
) -> DVector<T> {
    let mut x = solve(b);
    for _ in 0..2 {
        let r = b - a * &x;
        x += solve(&r);
    }
    x
}

/// Replaces `a` by `(a + aᵀ)/2`, which is bit-exactly symmetric.
pub(crate) fn symmetrize<T: Real>(a: &mut DMatrix<T>) {
    let d = a.nrows();
    let half = T::lit(0.5);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
