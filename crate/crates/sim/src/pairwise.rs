//! Paired significance summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SimError};

/// Mean of paired differences with its standard error, t statistic and
/// two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub mean: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test with `K - 1` degrees of freedom.
///
/// Constant differences have no sampling variability: a nonzero constant
/// gets `p = 0` and an all-zero vector gets `p = 1`.
pub fn summarize_pairwise(diffs: &[f64]) -> Result<PairedSummary> {
    let k = diffs.len();
    if k < 2 {
        return Err(SimError::Stats(format!("paired test needs at least 2 differences, got {k}")));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(SimError::Stats("non-finite paired difference".into()));
    }
    let kf = k as f64;
    let mean = diffs.iter().sum::<f64>() / kf;
    let constant = diffs.iter().all(|&d| d == diffs[0]);
    if constant {
        let c = diffs[0];
        return Ok(if c == 0.0 {
            PairedSummary { mean: 0.0, se: 0.0, t: 0.0, p: 1.0 }
        } else {
            PairedSummary { mean: c, se: 0.0, t: c.signum() * f64::INFINITY, p: 0.0 }
        });
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (kf - 1.0);
    let se = (var / kf).sqrt();
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, kf - 1.0).map_err(|e| SimError::Stats(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(PairedSummary { mean, se, t, p })
}
