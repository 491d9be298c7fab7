//! Estimator names accepted in experiment configurations.

use std::fmt;
use std::str::FromStr;

use crate::error::SimError;

/// Model family an experiment fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Ols,
    Glm,
    Interp,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Ols => "ols",
            Model::Glm => "glm",
            Model::Interp => "interp",
        })
    }
}

/// A fitted estimator as named in configs and result files.
///
/// `_hat` variants plug estimated noise/signal levels into the ratio formula,
/// `_tau` variants use the known signal level, `_oracle` variants the true
/// parameters, and `(a)` variants a fixed ratio `a`. `LinearMixedSweep` and
/// `LossMixedSweep` expand to one fixed-ratio column per swept value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Supervised,
    Semisupervised,
    Adaptive,
    LinearMixedHat,
    LinearMixedTau,
    LinearMixedOracle,
    LinearMixed(f64),
    LossMixedHat,
    LossMixedTilde,
    LossMixedOracle,
    LossMixed(f64),
    MinNorm,
    MinVariance,
    MixedHat,
    MixedTau,
    MixedOracle,
    Mixed(f64),
    LinearMixedSweep,
    LossMixedSweep,
}

impl Estimator {
    pub fn supports(&self, model: Model) -> bool {
        use Estimator::*;
        match model {
            Model::Ols => matches!(
                self,
                Supervised
                    | Semisupervised
                    | Adaptive
                    | LinearMixedHat
                    | LinearMixedTau
                    | LinearMixedOracle
                    | LinearMixed(_)
                    | LossMixedHat
                    | LossMixedTilde
                    | LossMixedOracle
                    | LossMixed(_)
                    | LinearMixedSweep
                    | LossMixedSweep
            ),
            Model::Glm => matches!(
                self,
                Supervised
                    | Semisupervised
                    | LinearMixedHat
                    | LinearMixedOracle
                    | LinearMixed(_)
                    | LossMixedHat
                    | LossMixedTilde
                    | LossMixedOracle
                    | LossMixed(_)
                    | LinearMixedSweep
                    | LossMixedSweep
            ),
            Model::Interp => matches!(self, MinNorm | MinVariance | MixedHat | MixedTau | MixedOracle | Mixed(_)),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, Estimator::LinearMixedSweep | Estimator::LossMixedSweep)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Estimator::*;
        let s = match self {
            Supervised => "supervised",
            Semisupervised => "semisupervised",
            Adaptive => "adaptive",
            LinearMixedHat => "linear_mixed_hat",
            LinearMixedTau => "linear_mixed_tau",
            LinearMixedOracle => "linear_mixed_oracle",
            LinearMixed(a) => return write!(f, "linear_mixed({a})"),
            LossMixedHat => "loss_mixed_hat",
            LossMixedTilde => "loss_mixed_tilde",
            LossMixedOracle => "loss_mixed_oracle",
            LossMixed(a) => return write!(f, "loss_mixed({a})"),
            MinNorm => "min_norm",
            MinVariance => "min_variance",
            MixedHat => "mixed_hat",
            MixedTau => "mixed_tau",
            MixedOracle => "mixed_oracle",
            Mixed(a) => return write!(f, "mixed({a})"),
            LinearMixedSweep => "linear_mixed",
            LossMixedSweep => "loss_mixed",
        };
        f.write_str(s)
    }
}

impl FromStr for Estimator {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        use Estimator::*;
        let s = s.trim();
        if let Some((head, rest)) = s.split_once('(') {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| SimError::config(format!("malformed estimator {s:?}")))?;
            let a: f64 = inner
                .trim()
                .parse()
                .map_err(|_| SimError::config(format!("estimator {s:?}: {inner:?} is not a number")))?;
            if !(0.0..=1.0).contains(&a) {
                return Err(SimError::config(format!("estimator {s:?}: ratio outside [0, 1]")));
            }
            return match head.trim() {
                "linear_mixed" => Ok(LinearMixed(a)),
                "loss_mixed" => Ok(LossMixed(a)),
                "mixed" => Ok(Mixed(a)),
                other => Err(SimError::config(format!("estimator {other:?} takes no ratio"))),
            };
        }
        Ok(match s {
            "supervised" => Supervised,
            "semisupervised" => Semisupervised,
            "adaptive" => Adaptive,
            "linear_mixed_hat" => LinearMixedHat,
            "linear_mixed_tau" => LinearMixedTau,
            "linear_mixed_oracle" => LinearMixedOracle,
            "loss_mixed_hat" => LossMixedHat,
            "loss_mixed_tilde" => LossMixedTilde,
            "loss_mixed_oracle" => LossMixedOracle,
            "min_norm" => MinNorm,
            "min_variance" => MinVariance,
            "mixed_hat" => MixedHat,
            "mixed_tau" => MixedTau,
            "mixed_oracle" => MixedOracle,
            "linear_mixed" => LinearMixedSweep,
            "loss_mixed" => LossMixedSweep,
            other => return Err(SimError::config(format!("unknown estimator {other:?}"))),
        })
    }
}
