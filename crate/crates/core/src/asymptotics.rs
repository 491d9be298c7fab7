//! Closed-form limits of the risk factors and of the optimal mixing gain as
//! `n, p` grow proportionally.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::alpha_star_finite_m;

/// Limit parameters: `gamma = lim p/n`, `gamma_tilde` either `lim p̃/n`
/// (interpolators) or `lim p/m` (finite pool), `c2 = lim tr(Σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSetting {
    pub gamma: f64,
    #[serde(default)]
    pub gamma_tilde: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub c2: f64,
}

/// Limiting gain `eta_inf`, mixing ratio `alpha_inf` and the term limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub eta_inf: f64,
    pub alpha_inf: f64,
    pub term_limits: BTreeMap<String, f64>,
}

fn check_common(s: &AsymptoticSetting) -> Result<()> {
    let finite = [s.gamma, s.gamma_tilde, s.sigma2, s.tau2, s.c2].iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::domain("non-finite asymptotic parameter"));
    }
    if !(s.gamma > 0.0) || !(s.c2 > 0.0) {
        return Err(Error::domain(format!("need gamma > 0 and c2 > 0 (gamma = {}, c2 = {})", s.gamma, s.c2)));
    }
    if s.sigma2 < 0.0 || s.tau2 < 0.0 {
        return Err(Error::domain("sigma2 and tau2 must be nonnegative"));
    }
    Ok(())
}

/// `η = 1 - σ²(v_l - v_u)² / (τ² v_l b_u + σ² v_l (v_l - v_u))`.
pub fn eta_from_terms(sigma2: f64, tau2: f64, v_l: f64, v_u: f64, b_u: f64) -> f64 {
    let d = v_l - v_u;
    1.0 - sigma2 * d * d / (tau2 * v_l * b_u + sigma2 * v_l * d)
}

/// Random-β OLS limits for `γ ∈ (0, 1)`.
pub fn ols_limits(s: &AsymptoticSetting) -> Result<LimitReport> {
    check_common(s)?;
    let g = s.gamma;
    if g >= 1.0 {
        return Err(Error::domain(format!("gamma = {g} must lie in (0, 1)")));
    }
    let (sig, tau, c2) = (s.sigma2, s.tau2, s.c2);
    let eta_inf = 1.0 - g.powi(4) * sig / ((1.0 - g) * g * g * tau * c2 + g.powi(3) * sig);
    let alpha_inf = g * g * sig / ((1.0 - g) * g * tau * c2 + g * g * sig);
    let term_limits = BTreeMap::from([
        ("v_u".to_string(), g),
        ("v_l".to_string(), g / (1.0 - g)),
        ("b_u".to_string(), g * c2),
    ]);
    Ok(LimitReport { eta_inf, alpha_inf, term_limits })
}

/// Spiked-covariance interpolator limits for `1 < γ̃ < γ`.
pub fn interp_limits(s: &AsymptoticSetting) -> Result<LimitReport> {
    check_common(s)?;
    let (g, gt) = (s.gamma, s.gamma_tilde);
    if !(1.0 < gt && gt < g) {
        return Err(Error::domain(format!("need 1 < gamma_tilde < gamma (gamma = {g}, gamma_tilde = {gt})")));
    }
    let v_l = 1.0 / (gt - 1.0);
    let v_u = 1.0 / (g - 1.0);
    let b_l = s.c2 * (1.0 - 1.0 / gt);
    let b_u = s.c2 * (1.0 - 1.0 / g);
    let gap = s.sigma2 * (v_l - v_u);
    let den = s.tau2 * (b_u - b_l) + gap;
    let r0 = s.tau2 * b_l + s.sigma2 * v_l;
    let (alpha_inf, eta_inf) = if den > 0.0 && r0 > 0.0 { (gap / den, 1.0 - gap * gap / (den * r0)) } else { (0.0, 1.0) };
    let term_limits = BTreeMap::from([
        ("v_l".to_string(), v_l),
        ("v_u".to_string(), v_u),
        ("b_l".to_string(), b_l),
        ("b_u".to_string(), b_u),
    ]);
    Ok(LimitReport { eta_inf, alpha_inf, term_limits })
}

/// Term limits of the finite-pool semi-supervised estimator, with
/// `gamma_tilde_m = lim p/m`. `v_l` is the supervised limit, unaffected by `m`.
pub fn finite_m_limits(gamma: f64, gamma_tilde_m: f64, c2: f64) -> Result<BTreeMap<String, f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&gamma_tilde_m) {
        return Err(Error::domain(format!("gamma_tilde = {gamma_tilde_m} must lie in [0, 1)")));
    }
    if !(c2 > 0.0) {
        return Err(Error::domain("c2 must be positive"));
    }
    let q = 1.0 - gamma_tilde_m;
    let q3 = q.powi(3);
    Ok(BTreeMap::from([
        ("b_u".to_string(), c2 * (1.0 + q3 - 2.0 * q * q + gamma) / q3),
        ("v_u".to_string(), gamma / q3),
        ("v_s".to_string(), gamma / q),
        ("v_l".to_string(), gamma / (1.0 - gamma)),
    ]))
}

/// Finite-pool report: term limits plus the mixing ratio and gain they imply.
pub fn finite_m_report(s: &AsymptoticSetting) -> Result<LimitReport> {
    check_common(s)?;
    let t = finite_m_limits(s.gamma, s.gamma_tilde, s.c2)?;
    let (v_l, v_u, v_s, b_u) = (t["v_l"], t["v_u"], t["v_s"], t["b_u"]);
    let alpha_inf = alpha_star_finite_m(s.sigma2, s.tau2, b_u, v_u, v_s, v_l)?;
    let r0 = s.sigma2 * v_l;
    let den = s.tau2 * b_u + s.sigma2 * (v_l + v_u - 2.0 * v_s);
    let gap = s.sigma2 * (v_l - v_s);
    let eta_inf = if r0 > 0.0 { 1.0 - gap * gap / (den * r0) } else { 1.0 };
    Ok(LimitReport { eta_inf, alpha_inf, term_limits: t })
}
