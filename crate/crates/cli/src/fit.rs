//! `fit` and `diagnose`: supervised, pool-informed and mixed estimates for
//! one labeled set and one unlabeled pool.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use mssl_core::diagnostics::MixDiagnostics;
use mssl_core::glm::{
    alpha_dot_glm, estimate_noise_glm, fit_glm_loss_mixed, fit_glm_semisupervised, fit_glm_supervised, glm_risk_terms,
    grid_search_alpha_ddot_glm, r_dot_glm_curve,
};
use mssl_core::interp::{alpha_star_interp, fit_min_norm, fit_min_variance, interp_risk_terms, iterate_sigma_tau};
use mssl_core::moments::{GaussianDesign, DEFAULT_BLOCKS};
use mssl_core::ols::{
    alpha_star_ols, fit_loss_mixed_ols, fit_ols_semisupervised, fit_ols_supervised, grid_search_alpha_ddot, mix_linear,
    noise_signal_ols, ols_risk_terms, r_dot_curve,
};
use mssl_core::stats::unit_grid;
use mssl_core::{build_moments, DVector, LabeledSet, Link, ResampleSpec, UnlabeledPool};
use mssl_sim::config::search_grid;
use mssl_sim::GridSpacing;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Ols,
    Glm(Option<String>),
    Interp,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ols" => Ok(ModelKind::Ols),
            "interp" => Ok(ModelKind::Interp),
            "glm" => Ok(ModelKind::Glm(None)),
            _ => match s.strip_prefix("glm:") {
                Some(link) if !link.is_empty() => Ok(ModelKind::Glm(Some(link.to_string()))),
                _ => Err(format!("unknown model {s:?}; expected ols, glm, glm:<link> or interp")),
            },
        }
    }
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Glm(_) => "glm",
            ModelKind::Interp => "interp",
        }
    }
}

/// How the mixing ratio is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    /// Plug-in closed form, linear mixing.
    Auto,
    /// Given ratio, linear mixing.
    Fixed(f64),
    /// Grid minimizer of the estimated loss-mixed risk, loss mixing.
    Grid,
}

impl FromStr for AlphaPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = match s {
            "auto" => return Ok(AlphaPolicy::Auto),
            "grid" => return Ok(AlphaPolicy::Grid),
            _ => s.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')).unwrap_or(s),
        };
        match num.parse::<f64>() {
            Ok(a) if (0.0..=1.0).contains(&a) => Ok(AlphaPolicy::Fixed(a)),
            Ok(a) => Err(format!("alpha {a} outside [0, 1]")),
            Err(_) => Err(format!("unknown alpha policy {s:?}; expected auto, grid or a number in [0, 1]")),
        }
    }
}

impl fmt::Display for AlphaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaPolicy::Auto => f.write_str("auto"),
            AlphaPolicy::Grid => f.write_str("grid"),
            AlphaPolicy::Fixed(a) => write!(f, "fixed({a})"),
        }
    }
}

pub struct FitRequest {
    pub labeled: LabeledSet,
    pub pool: UnlabeledPool,
    pub model: ModelKind,
    pub link: Option<String>,
    pub alpha: AlphaPolicy,
    pub grid_size: usize,
    pub seed: u64,
    /// Emit the estimated risk curve instead of coefficients.
    pub diagnose: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaChoice {
    pub policy: String,
    pub value: f64,
    /// `formula`, `grid` or `fixed`.
    pub source: &'static str,
    /// `linear` (coefficient mix) or `loss` (blended objective).
    pub mixing: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub model: &'static str,
    pub link: String,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    /// Labeled covariates were shifted by the pool mean before fitting.
    pub pool_mean_removed: bool,
    pub alpha: AlphaChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, Vec<f64>>>,
    pub diagnostics: MixDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_curve: Option<Vec<CurvePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn coefficients(names: [&str; 2], base: &DVector<f64>, pooled: &DVector<f64>, mixed: &DVector<f64>) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([
        (names[0].to_string(), vec_of(base)),
        (names[1].to_string(), vec_of(pooled)),
        ("mixed".to_string(), vec_of(mixed)),
    ])
}

fn closed_curve(k: usize, f: impl Fn(f64) -> f64) -> Vec<CurvePoint> {
    unit_grid(k).into_iter().map(|a| CurvePoint { alpha: a, risk: f(a) }).collect()
}

pub fn run_fit(req: &FitRequest) -> Result<FitOutput> {
    if req.grid_size < 5 {
        return Err(CliError::usage(format!("--grid-size {} must be at least 5", req.grid_size)));
    }
    if req.labeled.p() != req.pool.p() {
        return Err(CliError::usage(format!("labeled data have p = {} but the pool has p = {}", req.labeled.p(), req.pool.p())));
    }
    let (n, p) = (req.labeled.n(), req.labeled.p());
    match req.model {
        ModelKind::Ols | ModelKind::Glm(_) if n <= p => {
            return Err(CliError::usage(format!("model {} needs n > p (n = {n}, p = {p})", req.model.name())));
        }
        ModelKind::Interp if p <= n + 1 => {
            return Err(CliError::usage(format!("model interp needs p > n + 1 (n = {n}, p = {p})")));
        }
        _ => {}
    }
    let link_name = match (&req.model, &req.link) {
        (ModelKind::Glm(Some(a)), Some(b)) if a != b => {
            return Err(CliError::usage(format!("conflicting links {a:?} and {b:?}")));
        }
        (ModelKind::Glm(Some(a)), _) => a.clone(),
        (ModelKind::Glm(None), l) => l.clone().unwrap_or_else(|| "elu".into()),
        (_, Some(l)) if l != "identity" => {
            return Err(CliError::usage(format!("model {} uses the identity link, not {l:?}", req.model.name())));
        }
        _ => "identity".into(),
    };
    let link = Link::by_name(&link_name).map_err(|e| CliError::usage(e.to_string()))?;
    let spec = ResampleSpec::new(n, DEFAULT_BLOCKS, req.seed);
    let grid = search_grid(req.grid_size, GridSpacing::Geometric);
    let mut out = match req.model {
        ModelKind::Ols => fit_ols(req, spec, &grid)?,
        ModelKind::Glm(_) => fit_glm(req, &link, spec, &grid)?,
        ModelKind::Interp => fit_interp(req, spec)?,
    };
    out.link = link_name;
    if req.diagnose {
        out.coefficients = None;
    } else {
        out.risk_curve = None;
    }
    Ok(out)
}

fn base_output(req: &FitRequest, alpha: AlphaChoice, diagnostics: MixDiagnostics) -> FitOutput {
    FitOutput {
        model: req.model.name(),
        link: String::new(),
        n: req.labeled.n(),
        p: req.labeled.p(),
        m: req.pool.m(),
        pool_mean_removed: req.model != ModelKind::Interp,
        alpha,
        coefficients: None,
        diagnostics,
        risk_curve: None,
        converged: None,
    }
}

fn choice(req: &FitRequest, value: f64, note: Option<String>) -> AlphaChoice {
    let (source, mixing) = match req.alpha {
        AlphaPolicy::Auto => ("formula", "linear"),
        AlphaPolicy::Fixed(_) => ("fixed", "linear"),
        AlphaPolicy::Grid => ("grid", "loss"),
    };
    AlphaChoice { policy: req.alpha.to_string(), value, source, mixing, note }
}

fn fit_ols(req: &FitRequest, spec: ResampleSpec, grid: &[f64]) -> Result<FitOutput> {
    let n = req.labeled.n();
    let (centered, mom) = build_moments(&req.pool, n)?;
    let data = req.labeled.shifted(mom.mean())?;
    let hat = fit_ols_supervised(&data)?;
    let breve = fit_ols_semisupervised(&data, &mom)?;
    let noise = noise_signal_ols(&data, &hat, &mom)?;
    let terms = ols_risk_terms(&centered, n, &breve, spec)?;
    let mut diag = MixDiagnostics::from_ols(&terms, &noise);
    let s2 = noise.sigma2_hat;
    let formula = alpha_star_ols(s2, terms.b_hat, terms.v_l, terms.v_u);
    diag.alpha_hat = formula.as_ref().ok().map(|r| r.0);
    let linear_curve = || closed_curve(req.grid_size, |a| r_dot_curve(a, s2, terms.b_hat, terms.v_l, terms.v_u));
    let (alpha, mixed, curve) = match req.alpha {
        AlphaPolicy::Auto => {
            let a = formula?.0;
            (a, mix_linear(&hat, &breve, a)?, linear_curve())
        }
        AlphaPolicy::Fixed(a) => (a, mix_linear(&hat, &breve, a)?, linear_curve()),
        AlphaPolicy::Grid => {
            let rc = grid_search_alpha_ddot(&data, &centered, &breve, s2, grid, spec)?;
            let a = rc.argmin_alpha;
            diag.alpha_tilde = Some(a);
            let pts = rc.alphas.iter().zip(&rc.r_hat).map(|(&alpha, &risk)| CurvePoint { alpha, risk }).collect();
            (a, fit_loss_mixed_ols(&data, &mom, a)?, pts)
        }
    };
    let mut out = base_output(req, choice(req, alpha, None), diag);
    out.coefficients = Some(coefficients(["supervised", "semisupervised"], &hat, &breve, &mixed));
    out.risk_curve = Some(curve);
    Ok(out)
}

fn fit_glm(req: &FitRequest, link: &Link, spec: ResampleSpec, grid: &[f64]) -> Result<FitOutput> {
    let n = req.labeled.n();
    let (centered, mom) = build_moments(&req.pool, n)?;
    let data = req.labeled.shifted(mom.mean())?;
    let hat = fit_glm_supervised(&data, link)?;
    let breve = fit_glm_semisupervised(&data, &centered, link)?;
    let noise = estimate_noise_glm(&data, &hat.beta, &breve.beta, &centered, link, spec)?;
    let q = glm_risk_terms(&centered, n, link, &breve.beta, spec)?;
    let mut diag = MixDiagnostics::from_glm(&q, noise.sigma2_hat);
    let s2 = noise.sigma2_hat;
    let formula = alpha_dot_glm(s2, q.b_g_hat, q.v_l_g, q.v_u_g, q.v_s_g);
    diag.alpha_hat = formula.as_ref().ok().map(|r| r.0.clamp(0.0, 1.0));
    let linear_curve = || closed_curve(req.grid_size, |a| r_dot_glm_curve(a, s2, q.b_g_hat, q.v_l_g, q.v_u_g, q.v_s_g));
    let mut converged = hat.converged && breve.converged;
    let (alpha, note, mixed, curve) = match req.alpha {
        AlphaPolicy::Auto => {
            let raw = formula?.0;
            let a = raw.clamp(0.0, 1.0);
            let note = (a != raw).then(|| format!("raw ratio {raw} clipped to [0, 1]"));
            (a, note, mix_linear(&hat.beta, &breve.beta, a)?, linear_curve())
        }
        AlphaPolicy::Fixed(a) => (a, None, mix_linear(&hat.beta, &breve.beta, a)?, linear_curve()),
        AlphaPolicy::Grid => {
            let rc = grid_search_alpha_ddot_glm(&centered, n, link, &breve.beta, s2, grid, spec)?;
            let a = rc.argmin_alpha;
            diag.alpha_tilde = Some(a);
            let fit = fit_glm_loss_mixed(&data, &centered, link, a)?;
            converged &= fit.converged;
            let pts = rc.alphas.iter().zip(&rc.r_hat).map(|(&alpha, &risk)| CurvePoint { alpha, risk }).collect();
            (a, None, fit.beta, pts)
        }
    };
    let mut out = base_output(req, choice(req, alpha, note), diag);
    out.coefficients = Some(coefficients(["supervised", "semisupervised"], &hat.beta, &breve.beta, &mixed));
    out.risk_curve = Some(curve);
    out.converged = Some(converged);
    Ok(out)
}

fn fit_interp(req: &FitRequest, spec: ResampleSpec) -> Result<FitOutput> {
    if req.alpha == AlphaPolicy::Grid {
        return Err(CliError::usage("the grid policy needs --model ols or glm"));
    }
    let data = &req.labeled;
    let z = req.pool.z();
    let sigma = z.tr_mul(z) / req.pool.m() as f64;
    let w_hat = fit_min_norm(data)?;
    let w_tilde = fit_min_variance(data, &sigma)?;
    let noise = iterate_sigma_tau(data, &sigma)?;
    let design = GaussianDesign::new(&sigma)?;
    let terms = interp_risk_terms(&sigma, data.n(), &design, spec)?;
    let mut diag = MixDiagnostics::from_interp(&terms, &noise);
    let (s2, t2) = (noise.sigma2_hat, noise.tau2_hat);
    let (formula, note) = if s2 <= 0.0 {
        (0.0, Some("estimated noise is zero; the minimum-norm fit is kept".to_string()))
    } else {
        match alpha_star_interp(s2, t2, &terms) {
            Ok((a, _)) => (a, None),
            Err(mssl_core::Error::Precondition(msg)) => (0.0, Some(format!("ratio undefined ({msg}); the fits coincide in risk"))),
            Err(e) => return Err(e.into()),
        }
    };
    diag.alpha_hat = Some(formula);
    let (alpha, note) = match req.alpha {
        AlphaPolicy::Fixed(a) => (a, None),
        _ => (formula, note),
    };
    let mixed = mix_linear(&w_hat, &w_tilde, alpha)?;
    let gap = s2 * (terms.v_l - terms.v_u).max(0.0);
    let den = t2 * (terms.b_u - terms.b_l).max(0.0) + gap;
    let r0 = terms.r_min_norm(s2, t2);
    let mut out = base_output(req, choice(req, alpha, note), diag);
    out.coefficients = Some(coefficients(["min_norm", "min_variance"], &w_hat, &w_tilde, &mixed));
    out.risk_curve = Some(closed_curve(req.grid_size, |a| r0 - 2.0 * a * gap + a * a * den));
    Ok(out)
}
