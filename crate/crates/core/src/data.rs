use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::scalar::Real;

/// Role a dataset plays in an experiment. Metric code checks the tag so
/// validation targets can never leak into test metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Paired inputs (one row per observation) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    inputs: DMatrix<T>,
    targets: DVector<T>,
    role: Partition,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: DMatrix<T>, targets: DVector<T>, role: Partition) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(shape(format!("{} input rows but {} targets", inputs.nrows(), targets.len())));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self { inputs, targets, role })
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<T>], targets: &[T], role: Partition) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(shape("ragged input rows"));
        }
        let inputs = DMatrix::from_row_iterator(rows.len(), dim, rows.iter().flatten().copied());
        Self::new(inputs, DVector::from_column_slice(targets), role)
    }

    /// Targets with no input features, as used by the intercept-only model.
    pub fn targets_only(targets: &[T], role: Partition) -> Self {
        Self { inputs: DMatrix::zeros(targets.len(), 0), targets: DVector::from_column_slice(targets), role }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<T> {
        &self.targets
    }

    pub fn role(&self) -> Partition {
        self.role
    }

    pub fn input(&self, i: usize) -> RowDVector<T> {
        self.inputs.row(i).into_owned()
    }

    pub fn input_vec(&self, i: usize) -> Vec<T> {
        self.inputs.row(i).iter().copied().collect()
    }

    pub fn with_role(mut self, role: Partition) -> Self {
        self.role = role;
        self
    }

    /// Same targets, inputs dropped.
    pub fn without_inputs(&self) -> Self {
        Self { inputs: DMatrix::zeros(self.len(), 0), targets: self.targets.clone(), role: self.role }
    }

    pub fn require_role(&self, role: Partition) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(Error::PartitionError(format!("expected {:?} partition, got {:?}", role, self.role)))
        }
    }

    /// Sample standard deviation of the targets (n - 1 denominator; 0 for n < 2).
    pub fn target_sd(&self) -> T {
        sample_sd(self.targets.as_slice())
    }
}

pub(crate) fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    // shifted by the first element so constant input gives that constant exactly
    let x0 = xs[0];
    x0 + xs.iter().fold(T::zero(), |a, &b| a + (b - x0)) / T::from_usize_lossy(xs.len())
}

pub(crate) fn sample_sd<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss = xs.iter().fold(T::zero(), |a, &b| a + (b - m) * (b - m));
    (ss / T::from_usize_lossy(xs.len() - 1)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths() {
        let err = Dataset::<f64>::new(DMatrix::zeros(3, 1), DVector::zeros(2), Partition::Train);
        assert!(matches!(err, Err(Error::ShapeError(_))));
    }

    #[test]
    fn role_check() {
        let d = Dataset::<f64>::targets_only(&[1.0, 2.0], Partition::Validation);
        assert!(d.require_role(Partition::Validation).is_ok());
        assert!(matches!(d.require_role(Partition::Test), Err(Error::PartitionError(_))));
    }

    #[test]
    fn sd_of_small_sets() {
        assert_eq!(sample_sd::<f64>(&[4.0]), 0.0);
        assert!((sample_sd::<f64>(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
