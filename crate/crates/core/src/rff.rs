//! Random feature map `x -> φ(Cx)` for synthetic over-parameterized demos.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Componentwise activation applied to the hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Elu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Elu => {
                if z < 0.0 {
                    z.exp_m1()
                } else {
                    z
                }
            }
        }
    }
}

/// Default activation triple.
pub const DEFAULT_ACTIVATIONS: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Elu];

/// `h x p` standard normal projection with an ordered activation list.
///
/// Output columns are activation-major: the first `h` columns use the first
/// activation, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    c: DMatrix<f64>,
    activations: Vec<Activation>,
    seed: u64,
}

impl RffMap {
    pub fn new(h: usize, p: usize, activations: &[Activation], seed: u64) -> Result<Self> {
        if h == 0 || p == 0 || activations.is_empty() {
            return Err(Error::precondition("feature map needs h > 0, p > 0 and at least one activation"));
        }
        let mut r = rng::stream(seed, &[0x4FF]);
        let c = rng::standard_normal_matrix(h, p, &mut r);
        Ok(Self { c, activations: activations.to_vec(), seed })
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows() * self.activations.len()
    }

    /// Raw features of the rows of `x`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.c.ncols() {
            return Err(Error::Shape(format!("input has {} columns but the map expects {}", x.ncols(), self.c.ncols())));
        }
        let h = self.c.nrows();
        let pre = x * self.c.transpose();
        let mut out = DMatrix::zeros(x.nrows(), self.output_dim());
        for (k, act) in self.activations.iter().enumerate() {
            out.columns_mut(k * h, h).copy_from(&pre.map(|z| act.apply(z)));
        }
        Ok(out)
    }
}

/// Per-column standardization fitted on transformed pool features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl FeatureScaler {
    /// Constant columns keep scale 1.
    pub fn fit(features: &DMatrix<f64>) -> Result<Self> {
        let m = features.nrows();
        if m < 2 {
            return Err(Error::InsufficientData { needed: 2, got: m });
        }
        let mean = DVector::from_iterator(features.ncols(), features.column_iter().map(|c| c.mean()));
        let scale = DVector::from_iterator(
            features.ncols(),
            features.column_iter().zip(mean.iter()).map(|(c, mu)| {
                let var = c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            }),
        );
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::Shape(format!("{} feature columns but scaler has {}", features.ncols(), self.mean.len())));
        }
        let mut out = features.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
            col /= self.scale[j];
        }
        Ok(out)
    }
}

/// Features of `x`, standardized with `scaler` when given.
pub fn rff_features(x: &DMatrix<f64>, map: &RffMap, scaler: Option<&FeatureScaler>) -> Result<DMatrix<f64>> {
    let raw = map.transform(x)?;
    match scaler {
        Some(s) => s.apply(&raw),
        None => Ok(raw),
    }
}
