//! Forward maps `G: R^d -> R^d` consumed by the posterior and the audits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A differentiable forward map with square Jacobian.
pub trait ForwardMap: Send + Sync {
    fn dim(&self) -> usize;

    fn forward(&self, q: &[f64]) -> Result<DVector<f64>>;

    fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>>;
}

impl<T: ForwardMap + ?Sized> ForwardMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn forward(&self, q: &[f64]) -> Result<DVector<f64>> {
        (**self).forward(q)
    }
    fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        (**self).jacobian(q)
    }
}

/// Affine map `q -> A q + b`. Its linearisation is exact, which makes it the
/// reference case for the surrogate-likelihood and coverage checks.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument("linear map must be square".into()));
        }
        if offset.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: offset.len(),
            });
        }
        Ok(Self { matrix, offset })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardMap for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn forward(&self, q: &[f64]) -> Result<DVector<f64>> {
        check_len(self.dim(), q)?;
        Ok(&self.matrix * DVector::from_column_slice(q) + &self.offset)
    }

    fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_len(self.dim(), q)?;
        Ok(self.matrix.clone())
    }
}

pub(crate) fn check_len(expected: usize, q: &[f64]) -> Result<()> {
    if q.len() != expected {
        Err(Error::DimensionMismatch {
            expected,
            got: q.len(),
        })
    } else {
        Ok(())
    }
}
