//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Every symmetric system in this crate is positive definite when well posed,
//! so everything goes through a Cholesky factor guarded by a condition-number
//! estimate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Matrices whose estimated condition number exceeds this are treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factor `a`, failing with [`Error::RankDeficient`] when `a` is not
    /// numerically positive definite.
    ///
    /// The condition estimate is `(max L_ii / min L_ii)^2`, a lower bound on
    /// the 2-norm condition number that is free once the factor exists.
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!("{what} is {}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("{what} has non-finite entries")));
        }
        let singular = || Error::RankDeficient {
            what: what.to_string(),
            rank: numerical_rank(a),
            dim: a.nrows(),
        };
        let chol = a.clone().cholesky().ok_or_else(singular)?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if a.nrows() > 0 && (lo <= 0.0 || (hi / lo).powi(2) > COND_LIMIT) {
            return Err(singular());
        }
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        symmetrize(&inv)
    }
}

/// Convenience: solve `a x = b` for SPD `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(SpdFactor::new(a, what)?.solve_vec(b))
}

/// Numerical rank from singular values, relative tolerance `1e-12`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let sv = a.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > max * 1e-12 && s > 0.0).count()
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Quadratic form `xᵀ A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}

/// Column means of `x`.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `Xᵀ C X` where `C = I - 11ᵀ/n` is the centering projector, i.e. `n` times
/// the sample covariance of the columns.
pub fn centered_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let xbar = column_means(x);
    let gram = x.tr_mul(x);
    symmetrize(&(gram - (&xbar * xbar.transpose()) * n))
}

/// `Xᵀ diag(w) X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for mut col in xw.column_iter_mut() {
        col.component_mul_assign(w);
    }
    symmetrize(&x.tr_mul(&xw))
}

/// Largest eigenvalue-based PSD check: returns the smallest eigenvalue.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
