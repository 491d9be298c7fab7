use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Supervised sample: `n` rows of covariates `x` and responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl LabeledSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "response has {} entries but covariates have {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("labeled data contains non-finite values"));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.mean()
    }

    /// Same responses with every covariate row shifted by `-shift`.
    pub fn shifted(&self, shift: &DVector<f64>) -> Result<Self> {
        if shift.len() != self.p() {
            return Err(Error::Shape(format!("shift has length {} but p = {}", shift.len(), self.p())));
        }
        let mut x = self.x.clone();
        for mut row in x.row_iter_mut() {
            row -= shift.transpose();
        }
        Ok(Self { x, y: self.y.clone() })
    }
}

/// Unlabeled covariates standing in for the covariate distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    z: DMatrix<f64>,
    centered: bool,
}

impl UnlabeledPool {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("pool contains non-finite values"));
        }
        Ok(Self { z, centered: false })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn m(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Column-centered copy of the pool and the means that were removed.
    ///
    /// A pool already flagged as centered is returned unchanged with zero means.
    pub fn centered(&self) -> (UnlabeledPool, DVector<f64>) {
        if self.centered {
            return (self.clone(), DVector::zeros(self.p()));
        }
        let mean = crate::linalg::column_means(&self.z);
        let mut z = self.z.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        (UnlabeledPool { z, centered: true }, mean)
    }

    /// Rows `idx` of the pool as an `idx.len() x p` matrix.
    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.z.select_rows(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_rejects_mismatch_and_nan() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(LabeledSet::new(x.clone(), DVector::from_vec(vec![1.0])).is_err());
        assert!(LabeledSet::new(x, DVector::from_vec(vec![1.0, f64::NAN])).is_err());
    }

    #[test]
    fn centering_is_recorded() {
        let z = DMatrix::from_row_slice(2, 2, &[6.0, 4.0, 4.0, 6.0]);
        let pool = UnlabeledPool::new(z).unwrap();
        let (c, mean) = pool.centered();
        assert!(c.is_centered());
        assert_eq!(mean.as_slice(), &[5.0, 5.0]);
        assert_eq!(c.z()[(0, 0)], 1.0);
        let (again, zero) = c.centered();
        assert_eq!(again.z(), c.z());
        assert_eq!(zero.norm(), 0.0);
    }
}
