//! Serializable summary of the quantities behind a data-driven mixing ratio.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::glm::GlmQuadratic;
use crate::interp::{InterpRiskTerms, NoiseSignalInterp};
use crate::ols::{NoiseSignalOls, OlsRiskTerms};

/// Estimated risk components and the resulting mixing ratios. Key names are
/// stable; quantities that do not apply to a model are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixDiagnostics {
    pub v_l: Option<f64>,
    pub v_u: Option<f64>,
    pub v_s: Option<f64>,
    #[serde(rename = "B_hat")]
    pub b_hat: Option<f64>,
    pub b_l: Option<f64>,
    pub b_u: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub tau2_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub alpha_tilde: Option<f64>,
    pub se: BTreeMap<String, f64>,
}

impl MixDiagnostics {
    pub fn from_ols(terms: &OlsRiskTerms, noise: &NoiseSignalOls) -> Self {
        let mut se = BTreeMap::new();
        se.insert("v_l".into(), terms.se_v_l);
        se.insert("B_hat".into(), terms.se_b_hat);
        Self {
            v_l: Some(terms.v_l),
            v_u: Some(terms.v_u),
            b_hat: Some(terms.b_hat),
            sigma2_hat: Some(noise.sigma2_hat),
            tau2_hat: Some(noise.tau2_hat),
            se,
            ..Self::default()
        }
    }

    pub fn from_glm(q: &GlmQuadratic, sigma2_hat: f64) -> Self {
        let mut se = BTreeMap::new();
        se.insert("v_l".into(), q.se_v_l_g);
        se.insert("v_s".into(), q.se_v_s_g);
        se.insert("B_hat".into(), q.se_b_g_hat);
        Self {
            v_l: Some(q.v_l_g),
            v_u: Some(q.v_u_g),
            v_s: Some(q.v_s_g),
            b_hat: Some(q.b_g_hat),
            sigma2_hat: Some(sigma2_hat),
            se,
            ..Self::default()
        }
    }

    pub fn from_interp(terms: &InterpRiskTerms, noise: &NoiseSignalInterp) -> Self {
        let se = BTreeMap::from([
            ("v_l".to_string(), terms.se_v_l),
            ("v_u".to_string(), terms.se_v_u),
            ("b_l".to_string(), terms.se_b_l),
            ("b_u".to_string(), terms.se_b_u),
        ]);
        Self {
            v_l: Some(terms.v_l),
            v_u: Some(terms.v_u),
            b_l: Some(terms.b_l),
            b_u: Some(terms.b_u),
            sigma2_hat: Some(noise.sigma2_hat),
            tau2_hat: Some(noise.tau2_hat),
            se,
            ..Self::default()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("diagnostics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_keys() {
        let v = MixDiagnostics::default().to_json();
        let obj = v.as_object().unwrap();
        for k in ["v_l", "v_u", "B_hat", "sigma2_hat", "tau2_hat", "alpha_hat", "alpha_tilde", "se"] {
            assert!(obj.contains_key(k), "missing {k}");
        }
    }
}
