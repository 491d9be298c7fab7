//! Sample summaries shared by the Monte Carlo estimators.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Mean and standard error (`sd / sqrt(k)`, unbiased variance) of `xs`.
/// A single value has standard error 0.
pub fn mean_se(xs: &[f64]) -> MeanSe {
    let k = xs.len();
    if k == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, count: 0 };
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return MeanSe { mean, se: 0.0, count: 1 };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    MeanSe { mean, se: (var / k as f64).sqrt(), count: k }
}

/// Index of the smallest finite value (first one on ties).
pub fn argmin(xs: &[f64]) -> Option<usize> {
    xs.iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// `k` equally spaced points on `[0, 1]`.
pub fn unit_grid(k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}

/// Running sum and sum of squares of a scalar observed once per draw.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarAcc {
    pub sum: f64,
    pub sumsq: f64,
    pub count: usize,
}

impl ScalarAcc {
    pub fn push(&mut self, v: f64) {
        self.sum += v;
        self.sumsq += v * v;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ScalarAcc) {
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self.count += other.count;
    }

    pub fn summary(&self) -> MeanSe {
        let k = self.count;
        if k == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN, count: 0 };
        }
        let mean = self.sum / k as f64;
        if k == 1 {
            return MeanSe { mean, se: 0.0, count: 1 };
        }
        let var = ((self.sumsq - k as f64 * mean * mean) / (k - 1) as f64).max(0.0);
        MeanSe { mean, se: (var / k as f64).sqrt(), count: k }
    }
}

/// Pooled mean and batch-means standard error from `(batch mean, draws)`
/// pairs; batches are weighted by their draw counts.
pub fn batch_means(batches: &[(f64, usize)]) -> MeanSe {
    let total: usize = batches.iter().map(|b| b.1).sum();
    if total == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, count: 0 };
    }
    let mean = batches.iter().map(|(m, c)| m * *c as f64).sum::<f64>() / total as f64;
    let used: Vec<_> = batches.iter().filter(|b| b.1 > 0).collect();
    if used.len() < 2 {
        return MeanSe { mean, se: f64::NAN, count: total };
    }
    let ss: f64 = used.iter().map(|(m, c)| *c as f64 * (m - mean).powi(2)).sum();
    let se = (ss / ((used.len() - 1) as f64 * total as f64)).sqrt();
    MeanSe { mean, se, count: total }
}

/// Average of a matrix-valued draw kept as batch means, so that any scalar
/// functional of it gets a batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedMatrix {
    mean: DMatrix<f64>,
    batch_means: Vec<(DMatrix<f64>, usize)>,
}

impl BatchedMatrix {
    /// From per-batch sums and draw counts; empty batches are dropped.
    pub fn from_sums(sums: Vec<(DMatrix<f64>, usize)>) -> Self {
        let total: usize = sums.iter().map(|(_, c)| c).sum();
        let mut iter = sums.iter().filter(|(_, c)| *c > 0);
        let first = iter.next().expect("at least one non-empty batch");
        let mut mean = first.0.clone();
        for (s, _) in iter {
            mean += s;
        }
        mean /= total.max(1) as f64;
        let batch_means = sums.into_iter().filter(|(_, c)| *c > 0).map(|(s, c)| (s / c as f64, c)).collect();
        Self { mean, batch_means }
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn draws(&self) -> usize {
        self.batch_means.iter().map(|(_, c)| c).sum()
    }

    /// `f(mean)` with a batch-means standard error; exact for linear `f`.
    pub fn functional(&self, f: impl Fn(&DMatrix<f64>) -> f64) -> MeanSe {
        let per_batch: Vec<(f64, usize)> = self.batch_means.iter().map(|(m, c)| (f(m), *c)).collect();
        let mut out = batch_means(&per_batch);
        out.mean = f(&self.mean);
        out
    }

    /// `xᵀ M x` at the averaged matrix.
    pub fn quad(&self, x: &DVector<f64>) -> MeanSe {
        self.functional(|m| x.dot(&(m * x)))
    }

    pub fn trace(&self) -> MeanSe {
        self.functional(|m| m.trace())
    }
}

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 20;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_basics() {
        let s = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_se(&[4.0]).se, 0.0);
    }

    #[test]
    fn scalar_acc_matches_mean_se() {
        let xs = [0.5, 1.5, -2.0, 4.0];
        let mut acc = ScalarAcc::default();
        xs.iter().for_each(|&x| acc.push(x));
        let a = acc.summary();
        let b = mean_se(&xs);
        assert!((a.mean - b.mean).abs() < 1e-15 && (a.se - b.se).abs() < 1e-14);
    }

    #[test]
    fn batched_matrix_equal_batches_reduce_to_batch_mean_se() {
        let sums = vec![
            (DMatrix::from_element(1, 1, 2.0), 2),
            (DMatrix::from_element(1, 1, 6.0), 2),
        ];
        let bm = BatchedMatrix::from_sums(sums);
        let t = bm.trace();
        assert_eq!(t.mean, 2.0);
        // batch means 1 and 3 -> sd sqrt(2), se = sqrt(2)/sqrt(2) = 1
        assert!((t.se - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_and_argmin() {
        let g = unit_grid(51);
        assert_eq!(g.len(), 51);
        assert_eq!(g[50], 1.0);
        assert!((g[1] - 0.02).abs() < 1e-15);
        assert_eq!(argmin(&[2.0, 1.0, 1.5]), Some(1));
        assert_eq!(argmin(&[f64::NAN, 3.0]), Some(1));
    }
}
