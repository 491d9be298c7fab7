//! Labeled training sets from a covariate law and a response model.

use mssl_core::moments::DesignSource;
use mssl_core::rng::StreamRng;
use mssl_core::{DVector, LabeledSet, Link};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// How the true coefficients are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaMode {
    /// Every coordinate equals `value`.
    Constant { value: f64 },
    /// Coordinates iid `N(0, tau2)`.
    RandomIid { tau2: f64 },
}

impl BetaMode {
    pub fn draw(&self, p: usize, rng: &mut StreamRng) -> Result<DVector<f64>> {
        match *self {
            BetaMode::Constant { value } => Ok(DVector::from_element(p, value)),
            BetaMode::RandomIid { tau2 } => {
                if !(tau2 >= 0.0) {
                    return Err(SimError::config(format!("tau2 = {tau2} must be nonnegative")));
                }
                let sd = tau2.sqrt();
                Ok(DVector::from_fn(p, |_, _| sd * normal(rng)))
            }
        }
    }
}

/// Draw `n` rows from `source` and a response `Y = g(Xβ) + ε`, `ε ~ N(0, σ²)`.
/// Returns the labeled set and the true `β`.
pub fn draw_dataset<S: DesignSource + ?Sized>(
    source: &S,
    n: usize,
    beta_mode: BetaMode,
    link: &Link,
    sigma2: f64,
    rng: &mut StreamRng,
) -> Result<(LabeledSet, DVector<f64>)> {
    let beta = beta_mode.draw(source.p(), rng)?;
    let data = draw_response(source, n, &beta, link, sigma2, rng)?;
    Ok((data, beta))
}

/// Like [`draw_dataset`] with a given `β`.
pub fn draw_response<S: DesignSource + ?Sized>(
    source: &S,
    n: usize,
    beta: &DVector<f64>,
    link: &Link,
    sigma2: f64,
    rng: &mut StreamRng,
) -> Result<LabeledSet> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(SimError::config(format!("sigma2 = {sigma2} must be finite and nonnegative")));
    }
    if beta.len() != source.p() {
        return Err(mssl_core::Error::Shape(format!("β has length {} but p = {}", beta.len(), source.p())).into());
    }
    let design_seed: u64 = rng.random();
    let x = source.draw(n, design_seed, 0)?;
    let sd = sigma2.sqrt();
    let eta = &x * beta;
    let y = DVector::from_fn(n, |i, _| link.g(eta[i]) + if sd > 0.0 { sd * normal(rng) } else { 0.0 });
    Ok(LabeledSet::new(x, y)?)
}
