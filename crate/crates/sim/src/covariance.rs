//! Covariance generators for the simulated covariate laws.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// A `p x p` covariance recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// Block-diagonal with unit variances and correlation `rho` inside each block.
    BlockEquicorrelated { p: usize, blocks: usize, rho: f64 },
    /// Diagonal with `major` on the first `floor(spike_fraction * p)` entries
    /// and `minor` elsewhere.
    SpikedDiagonal { p: usize, spike_fraction: f64, major: f64, minor: f64 },
    Identity { p: usize },
    Custom { matrix: Vec<Vec<f64>> },
}

impl CovarianceSpec {
    pub fn p(&self) -> usize {
        match self {
            CovarianceSpec::BlockEquicorrelated { p, .. }
            | CovarianceSpec::SpikedDiagonal { p, .. }
            | CovarianceSpec::Identity { p } => *p,
            CovarianceSpec::Custom { matrix } => matrix.len(),
        }
    }
}

/// Number of spiked entries; tolerant to `0.8 * 100` landing just below 80.
pub fn spike_count(p: usize, fraction: f64) -> usize {
    ((fraction * p as f64) + 1e-9).floor() as usize
}

pub fn gen_sigma(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let p = spec.p();
    if p == 0 {
        return Err(SimError::config("covariance dimension must be positive"));
    }
    match spec {
        CovarianceSpec::BlockEquicorrelated { blocks, rho, .. } => {
            let blocks = *blocks;
            if blocks == 0 || p % blocks != 0 {
                return Err(SimError::config(format!("p = {p} is not divisible into {blocks} blocks")));
            }
            let size = p / blocks;
            let lower = if size > 1 { -1.0 / (size as f64 - 1.0) } else { f64::NEG_INFINITY };
            if !(rho.is_finite() && *rho > lower && *rho < 1.0) {
                return Err(mssl_core::Error::Singular(format!(
                    "block covariance with rho = {rho} (blocks of {size} need rho in ({lower}, 1))"
                ))
                .into());
            }
            Ok(DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if i / size == j / size {
                    *rho
                } else {
                    0.0
                }
            }))
        }
        CovarianceSpec::SpikedDiagonal { spike_fraction, major, minor, .. } => {
            if !(0.0..=1.0).contains(spike_fraction) {
                return Err(SimError::config(format!("spike fraction {spike_fraction} outside [0, 1]")));
            }
            if !(*major >= 0.0 && *minor >= 0.0) || !major.is_finite() || !minor.is_finite() {
                return Err(mssl_core::Error::Singular("spiked covariance with negative entries".into()).into());
            }
            let k = spike_count(p, *spike_fraction);
            Ok(DMatrix::from_diagonal(&DVector::from_fn(p, |i, _| if i < k { *major } else { *minor })))
        }
        CovarianceSpec::Identity { .. } => Ok(DMatrix::identity(p, p)),
        CovarianceSpec::Custom { matrix } => {
            if matrix.iter().any(|r| r.len() != p) {
                return Err(SimError::config("custom covariance must be square"));
            }
            let m = DMatrix::from_fn(p, p, |i, j| matrix[i][j]);
            if m.iter().any(|v| !v.is_finite()) {
                return Err(SimError::config("custom covariance has non-finite entries"));
            }
            if (&m - m.transpose()).amax() > 1e-10 {
                return Err(SimError::config("custom covariance is not symmetric"));
            }
            let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * m.trace().abs().max(1.0) {
                return Err(mssl_core::Error::Singular(format!("custom covariance (smallest eigenvalue {min_eig})")).into());
            }
            Ok(m)
        }
    }
}

/// Scale `sigma` so that its trace equals `target`.
pub fn rescale_to_trace(sigma: &DMatrix<f64>, target: f64) -> Result<DMatrix<f64>> {
    let tr = sigma.trace();
    if !(tr > 0.0) || !(target > 0.0) {
        return Err(SimError::config(format!("cannot rescale a covariance of trace {tr} to {target}")));
    }
    Ok(sigma * (target / tr))
}
