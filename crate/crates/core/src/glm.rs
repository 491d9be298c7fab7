//! Canonical-link GLM estimators and their quadratic-approximation risk terms.
//!
//! All fits minimize a convex objective built from the canonical loss
//! `G(xᵀβ) - xᵀβ y` by damped Newton iterations. The risk terms carry an
//! extra factor `n` relative to the squared-loss ones in [`crate::ols`]; under
//! the identity link `v_l^g = n v_l`, `v_u^g = v_s^g = n v_u` and `B_g = n B`,
//! so the mixing ratios coincide.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, UnlabeledPool};
use crate::error::{Error, Result};
use crate::linalg::{column_means, symmetrize, trace_product, weighted_gram, SpdFactor};
use crate::link::Link;
use crate::moments::{fold_draws, ResampleSpec};
use crate::ols::{check_grid, xi, RiskCurve};
use crate::stats::{ScalarAcc, DEFAULT_BATCHES};

/// Newton iteration cap.
pub const MAX_ITER: usize = 100;
/// Convergence threshold on the Newton step norm.
pub const STEP_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 60;
const DIVERGENCE_RUN: usize = 5;

/// Outcome of a Newton fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFitReport {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// `(1 - α) L̂(β) + α L̆(β)` with
/// `L̂ = (1/n) Σ G(xᵢᵀβ) - xᵢᵀβ yᵢ` and
/// `L̆ = Ê_z[G(zᵀβ)] - z̄ᵀβ Ȳ - βᵀ Ĉov(X, Y)`.
#[derive(Debug, Clone)]
pub struct GlmObjective<'a> {
    data: &'a LabeledSet,
    pool: Option<&'a UnlabeledPool>,
    link: &'a Link,
    alpha: f64,
    cov_xy: DVector<f64>,
    zbar: DVector<f64>,
}

impl<'a> GlmObjective<'a> {
    pub fn new(data: &'a LabeledSet, pool: Option<&'a UnlabeledPool>, link: &'a Link, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::domain(format!("mixing ratio {alpha} outside [0, 1]")));
        }
        if alpha > 0.0 && pool.is_none() {
            return Err(Error::precondition("a pool is required when α > 0"));
        }
        if let Some(z) = pool {
            if z.p() != data.p() {
                return Err(Error::Shape(format!("labeled p = {} but pool p = {}", data.p(), z.p())));
            }
        }
        let n = data.n() as f64;
        let xbar = column_means(data.x());
        let cov_xy = (data.x().tr_mul(data.y()) - &xbar * (n * data.y_mean())) / n;
        let zbar = pool.map(|z| column_means(z.z())).unwrap_or_else(|| DVector::zeros(data.p()));
        Ok(Self { data, pool, link, alpha, cov_xy, zbar })
    }

    pub fn supervised(data: &'a LabeledSet, link: &'a Link) -> Result<Self> {
        Self::new(data, None, link, 0.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn pool_weight(&self) -> f64 {
        self.alpha
    }

    fn sample_weight(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        if self.sample_weight() > 0.0 {
            let eta = self.data.x() * beta;
            let s: f64 = eta.iter().zip(self.data.y().iter()).map(|(&e, &y)| self.link.big_g(e) - e * y).sum();
            v += self.sample_weight() * s / self.data.n() as f64;
        }
        if let (true, Some(z)) = (self.pool_weight() > 0.0, self.pool) {
            let eta = z.z() * beta;
            let s: f64 = eta.iter().map(|&e| self.link.big_g(e)).sum::<f64>() / z.m() as f64;
            let lin = self.zbar.dot(beta) * self.data.y_mean() + beta.dot(&self.cov_xy);
            v += self.pool_weight() * (s - lin);
        }
        v
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(beta.len());
        if self.sample_weight() > 0.0 {
            let eta = self.data.x() * beta;
            let r = DVector::from_iterator(eta.len(), eta.iter().zip(self.data.y().iter()).map(|(&e, &y)| self.link.g(e) - y));
            grad += self.data.x().tr_mul(&r) * (self.sample_weight() / self.data.n() as f64);
        }
        if let (true, Some(z)) = (self.pool_weight() > 0.0, self.pool) {
            let mu = (z.z() * beta).map(|e| self.link.g(e));
            let g = z.z().tr_mul(&mu) / z.m() as f64 - &self.zbar * self.data.y_mean() - &self.cov_xy;
            grad += g * self.pool_weight();
        }
        grad
    }

    pub fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let p = beta.len();
        let mut hess = DMatrix::zeros(p, p);
        if self.sample_weight() > 0.0 {
            let d = (self.data.x() * beta).map(|e| self.link.gprime(e));
            hess += weighted_gram(self.data.x(), &d) * (self.sample_weight() / self.data.n() as f64);
        }
        if let (true, Some(z)) = (self.pool_weight() > 0.0, self.pool) {
            let d = (z.z() * beta).map(|e| self.link.gprime(e));
            hess += weighted_gram(z.z(), &d) * (self.pool_weight() / z.m() as f64);
        }
        hess
    }
}

/// Damped Newton minimization of `obj` from `start`.
pub fn newton(obj: &GlmObjective<'_>, start: DVector<f64>) -> Result<GlmFitReport> {
    let mut beta = start;
    let mut f = obj.value(&beta);
    let mut last_step = f64::INFINITY;
    let mut growth = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let grad = obj.gradient(&beta);
        let hess = obj.hessian(&beta);
        let dir = match SpdFactor::new(&hess, "Newton Hessian") {
            Ok(fac) => fac.solve_vec(&grad),
            Err(_) => {
                // damped retry with a small ridge
                let ridge = 1e-8 * (hess.trace().abs() / hess.nrows() as f64).max(1e-12);
                let damped = &hess + DMatrix::identity(hess.nrows(), hess.ncols()) * ridge;
                SpdFactor::new(&damped, "damped Newton Hessian")?.solve_vec(&grad)
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta - &dir * t;
            let fc = obj.value(&cand);
            if fc.is_finite() && fc <= f + 1e-14 * (1.0 + f.abs()) {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let step = match accepted {
            Some((cand, fc)) => {
                let s = (&cand - &beta).norm();
                beta = cand;
                f = fc;
                s
            }
            None => 0.0,
        };
        growth = if step > last_step { growth + 1 } else { 0 };
        last_step = step;
        if step < STEP_TOL {
            converged = true;
            break;
        }
        if growth >= DIVERGENCE_RUN {
            break;
        }
    }
    let gradient_norm = obj.gradient(&beta).norm();
    Ok(GlmFitReport { beta, iterations, final_step_norm: last_step, converged, gradient_norm })
}

fn require_centered(pool: &UnlabeledPool) -> Result<()> {
    if !pool.is_centered() {
        return Err(Error::precondition("pool must be centered (see build_moments)"));
    }
    Ok(())
}

/// Supervised canonical-loss minimizer.
pub fn fit_glm_supervised(data: &LabeledSet, link: &Link) -> Result<GlmFitReport> {
    let obj = GlmObjective::supervised(data, link)?;
    newton(&obj, DVector::zeros(data.p()))
}

/// Semi-supervised minimizer using pool averages for the expectation terms.
pub fn fit_glm_semisupervised(data: &LabeledSet, pool: &UnlabeledPool, link: &Link) -> Result<GlmFitReport> {
    fit_glm_loss_mixed(data, pool, link, 1.0)
}

/// Minimizer of the loss-mixed objective at ratio `alpha`.
pub fn fit_glm_loss_mixed(data: &LabeledSet, pool: &UnlabeledPool, link: &Link, alpha: f64) -> Result<GlmFitReport> {
    require_centered(pool)?;
    let obj = GlmObjective::new(data, Some(pool), link, alpha)?;
    newton(&obj, DVector::zeros(data.p()))
}

/// Quadratic-approximation quantities at `beta_eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmQuadratic {
    pub beta_eval: DVector<f64>,
    /// `H_g = E[XᵀDX]` from the pool.
    pub hg_hat: DMatrix<f64>,
    pub v_l_g: f64,
    pub v_u_g: f64,
    pub v_s_g: f64,
    pub b_g_hat: f64,
    pub se_v_l_g: f64,
    pub se_v_s_g: f64,
    pub se_b_g_hat: f64,
    pub zeta_hat_mean: DVector<f64>,
    pub zeta_hat_cov: DMatrix<f64>,
    /// `tr(E[XᵀX A XᵀD²X A])`, `A = (XᵀDX)⁻¹`, used by the noise estimate.
    pub noise_trace: f64,
    pub blocks_used: usize,
    pub blocks_skipped: usize,
}

/// Pool-level quantities at a fixed evaluation point.
struct PoolTerms {
    h: DMatrix<f64>,
    hg: DMatrix<f64>,
    h2: DMatrix<f64>,
    /// `E[Xᵀμ] = n Ê[z g(zᵀβ)]`.
    x_mu: DVector<f64>,
}

fn pool_terms(pool: &UnlabeledPool, n: usize, link: &Link, beta: &DVector<f64>) -> Result<PoolTerms> {
    let z = pool.z();
    let eta = z * beta;
    let d = eta.map(|e| link.gprime(e));
    if let Some(bad) = d.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::LinkValidation(format!("g' = {bad} is not strictly positive on the pool")));
    }
    let scale = n as f64 / pool.m() as f64;
    let h = symmetrize(&z.tr_mul(z)) * scale;
    let hg = weighted_gram(z, &d) * scale;
    let h2 = weighted_gram(z, &d.component_mul(&d)) * scale;
    let mu = eta.map(|e| link.g(e));
    let x_mu = z.tr_mul(&mu) * scale;
    Ok(PoolTerms { h, hg, h2, x_mu })
}

fn check_inputs(pool: &UnlabeledPool, n: usize, beta: &DVector<f64>) -> Result<()> {
    require_centered(pool)?;
    if beta.len() != pool.p() {
        return Err(Error::Shape(format!("evaluation point has length {} but p = {}", beta.len(), pool.p())));
    }
    if n <= pool.p() {
        return Err(Error::precondition(format!("GLM risk terms need n > p (n = {n}, p = {})", pool.p())));
    }
    Ok(())
}

/// `ζ = E[Xᵀμ] - n Ĉov(X, μ)` for one design.
fn zeta(x: &DMatrix<f64>, mu: &DVector<f64>, x_mu: &DVector<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    let xbar = column_means(x);
    let ncov = x.tr_mul(mu) - xbar * (n * mu.mean());
    x_mu - ncov
}

#[derive(Clone)]
struct GlmAcc {
    v_l: ScalarAcc,
    v_s: ScalarAcc,
    b: ScalarAcc,
    noise: ScalarAcc,
    zeta_sum: DVector<f64>,
    zeta_outer: DMatrix<f64>,
}

/// Risk terms of the supervised and semi-supervised GLM estimators with `D`
/// and `μ` evaluated at `beta_eval`, over designs of `spec.block_size` rows
/// drawn from the centered `pool` (`spec.block_size` is replaced by `n`).
///
/// `B_g` is the uncentered second moment `E[ζᵀH_g⁻¹ζ]`.
pub fn glm_risk_terms(
    pool: &UnlabeledPool,
    n: usize,
    link: &Link,
    beta_eval: &DVector<f64>,
    spec: ResampleSpec,
) -> Result<GlmQuadratic> {
    let spec = ResampleSpec { block_size: n, ..spec };
    check_inputs(pool, n, beta_eval)?;
    spec.validate(pool.m())?;
    let pt = pool_terms(pool, n, link, beta_eval)?;
    let hg_f = SpdFactor::new(&pt.hg, "H_g")?;
    let p = pool.p();
    let nf = n as f64;
    let ratio = (nf - 1.0) / nf;
    let v_u_g = ratio * trace_product(&hg_f.inverse(), &pt.h);
    let fold = fold_draws(
        pool,
        spec,
        DEFAULT_BATCHES,
        || GlmAcc {
            v_l: ScalarAcc::default(),
            v_s: ScalarAcc::default(),
            b: ScalarAcc::default(),
            noise: ScalarAcc::default(),
            zeta_sum: DVector::zeros(p),
            zeta_outer: DMatrix::zeros(p, p),
        },
        |acc, x| {
            let eta = x * beta_eval;
            let d = eta.map(|e| link.gprime(e));
            let xdx = weighted_gram(x, &d);
            let Ok(a) = SpdFactor::new(&xdx, "XᵀDX") else { return false };
            let gram = symmetrize(&x.tr_mul(x));
            let ag = a.solve_mat(&gram);
            // A G A = (A (A G)ᵀ)
            let aga = a.solve_mat(&ag.transpose());
            acc.v_l.push(trace_product(&aga, &pt.hg));
            acc.v_s.push(ratio * ag.trace());
            let xd2x = weighted_gram(x, &d.component_mul(&d));
            let a_xd2x = a.solve_mat(&xd2x);
            acc.noise.push(trace_product(&ag, &a_xd2x));
            let mu = eta.map(|e| link.g(e));
            let z = zeta(x, &mu, &pt.x_mu);
            acc.b.push(z.dot(&hg_f.solve_vec(&z)));
            acc.zeta_outer += &z * z.transpose();
            acc.zeta_sum += z;
            true
        },
    )?;
    let (mut v_l, mut v_s, mut b, mut noise) = (ScalarAcc::default(), ScalarAcc::default(), ScalarAcc::default(), ScalarAcc::default());
    let mut zsum = DVector::zeros(p);
    let mut zouter = DMatrix::zeros(p, p);
    let mut used = 0;
    for (acc, count) in fold.batches {
        v_l.merge(&acc.v_l);
        v_s.merge(&acc.v_s);
        b.merge(&acc.b);
        noise.merge(&acc.noise);
        zsum += acc.zeta_sum;
        zouter += acc.zeta_outer;
        used += count;
    }
    let k = used as f64;
    let zmean = zsum / k;
    let zcov = if used > 1 {
        symmetrize(&((zouter - &zmean * zmean.transpose() * k) / (k - 1.0)))
    } else {
        DMatrix::zeros(p, p)
    };
    let (v_l, v_s, b, noise) = (v_l.summary(), v_s.summary(), b.summary(), noise.summary());
    Ok(GlmQuadratic {
        beta_eval: beta_eval.clone(),
        hg_hat: pt.hg,
        v_l_g: v_l.mean,
        v_u_g,
        v_s_g: v_s.mean,
        b_g_hat: b.mean.max(0.0),
        se_v_l_g: v_l.se,
        se_v_s_g: v_s.se,
        se_b_g_hat: b.se,
        zeta_hat_mean: zmean,
        zeta_hat_cov: zcov,
        noise_trace: noise.mean,
        blocks_used: used,
        blocks_skipped: fold.skipped,
    })
}

/// Noise estimate for the GLM model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmNoise {
    pub sigma2_hat: f64,
    pub denominator: f64,
    pub trace_term: f64,
    /// The raw estimate was negative and has been clipped to 0.
    pub clipped: bool,
}

/// `σ̂² = ‖g(Xβ̂) - Y‖² / (n - 2p + tr(E[XᵀX A XᵀD²X A]))` with `D` at `β̆`.
pub fn estimate_noise_glm(
    data: &LabeledSet,
    beta_hat: &DVector<f64>,
    beta_breve: &DVector<f64>,
    pool: &UnlabeledPool,
    link: &Link,
    spec: ResampleSpec,
) -> Result<GlmNoise> {
    let spec = ResampleSpec { block_size: data.n(), ..spec };
    let trace_term = noise_trace(pool, link, beta_breve, spec)?;
    noise_from_trace(data, beta_hat, link, trace_term)
}

/// The trace term of [`estimate_noise_glm`] alone.
pub fn noise_trace(pool: &UnlabeledPool, link: &Link, beta_eval: &DVector<f64>, spec: ResampleSpec) -> Result<f64> {
    check_inputs(pool, spec.block_size, beta_eval)?;
    spec.validate(pool.m())?;
    let fold = fold_draws(
        pool,
        spec,
        DEFAULT_BATCHES,
        ScalarAcc::default,
        |acc, x| {
            let d = (x * beta_eval).map(|e| link.gprime(e));
            let Ok(a) = SpdFactor::new(&weighted_gram(x, &d), "XᵀDX") else { return false };
            let ag = a.solve_mat(&symmetrize(&x.tr_mul(x)));
            let ad2 = a.solve_mat(&weighted_gram(x, &d.component_mul(&d)));
            acc.push(trace_product(&ag, &ad2));
            true
        },
    )?;
    let mut all = ScalarAcc::default();
    fold.batches.iter().for_each(|(a, _)| all.merge(a));
    Ok(all.summary().mean)
}

/// Noise estimate given a precomputed trace term.
pub fn noise_from_trace(data: &LabeledSet, beta_hat: &DVector<f64>, link: &Link, trace_term: f64) -> Result<GlmNoise> {
    let (n, p) = (data.n() as f64, data.p() as f64);
    let denominator = n - 2.0 * p + trace_term;
    if !(denominator > 0.0) {
        return Err(Error::precondition(format!(
            "noise denominator n - 2p + trace = {denominator} is not positive (trace = {trace_term})"
        )));
    }
    let fitted = (data.x() * beta_hat).map(|e| link.g(e));
    let rss = (fitted - data.y()).norm_squared();
    let raw = rss / denominator;
    Ok(GlmNoise { sigma2_hat: raw.max(0.0), denominator, trace_term, clipped: raw < 0.0 })
}

/// `α̇ = σ²(v_l - v_s)/(B_g + σ²(v_l + v_u - 2v_s))` and the minimum of the
/// approximate risk.
pub fn alpha_dot_glm(sigma2: f64, b_g: f64, v_l: f64, v_u: f64, v_s: f64) -> Result<(f64, f64)> {
    let curv = v_l + v_u - 2.0 * v_s;
    if !(curv > 0.0) {
        return Err(Error::precondition(format!("v_l + v_u - 2 v_s = {curv} must be positive")));
    }
    let den = b_g + sigma2 * curv;
    if !(den > 0.0) {
        return Err(Error::precondition("B_g + σ²(v_l + v_u - 2 v_s) must be positive"));
    }
    let gap = sigma2 * (v_l - v_s);
    Ok((gap / den, sigma2 * v_l - gap * gap / den))
}

/// Approximate risk of the linear mixture at `alpha`.
pub fn r_dot_glm_curve(alpha: f64, sigma2: f64, b_g: f64, v_l: f64, v_u: f64, v_s: f64) -> f64 {
    alpha * alpha * (b_g + sigma2 * (v_l + v_u - 2.0 * v_s)) - 2.0 * alpha * sigma2 * (v_l - v_s) + sigma2 * v_l
}

/// Grid estimate of the loss-mixed GLM risk
/// `α² ζᵀS H_g S ζ + ξ_α σ² tr(H_g S XᵀX S)`, `S = (αH_g + (1-α)XᵀDX)⁻¹`.
pub fn grid_search_alpha_ddot_glm(
    pool: &UnlabeledPool,
    n: usize,
    link: &Link,
    beta_eval: &DVector<f64>,
    sigma2_hat: f64,
    grid: &[f64],
    spec: ResampleSpec,
) -> Result<RiskCurve> {
    check_grid(grid, 2)?;
    let spec = ResampleSpec { block_size: n, ..spec };
    check_inputs(pool, n, beta_eval)?;
    spec.validate(pool.m())?;
    let pt = pool_terms(pool, n, link, beta_eval)?;
    let k = grid.len();
    let fold = fold_draws(
        pool,
        spec,
        DEFAULT_BATCHES,
        || vec![ScalarAcc::default(); k],
        |acc, x| {
            let eta = x * beta_eval;
            let d = eta.map(|e| link.gprime(e));
            let xdx = weighted_gram(x, &d);
            let gram = symmetrize(&x.tr_mul(x));
            let mu = eta.map(|e| link.g(e));
            let z = zeta(x, &mu, &pt.x_mu);
            let mut vals = Vec::with_capacity(k);
            for &a in grid {
                let blend = symmetrize(&(&pt.hg * a + &xdx * (1.0 - a)));
                let Ok(s) = SpdFactor::new(&blend, "αH_g + (1-α)XᵀDX") else { return false };
                let sz = s.solve_vec(&z);
                let bias = a * a * sz.dot(&(&pt.hg * &sz));
                let sgs = s.solve_mat(&s.solve_mat(&gram).transpose());
                let var = xi(a, n) * sigma2_hat * trace_product(&pt.hg, &sgs);
                vals.push(bias + var);
            }
            acc.iter_mut().zip(vals).for_each(|(s, v)| s.push(v));
            true
        },
    )?;
    let mut all = vec![ScalarAcc::default(); k];
    for (acc, _) in &fold.batches {
        all.iter_mut().zip(acc).for_each(|(a, b)| a.merge(b));
    }
    let summaries: Vec<_> = all.iter().map(|a| a.summary()).collect();
    RiskCurve::from_values(grid.to_vec(), summaries.iter().map(|s| s.mean).collect(), summaries.iter().map(|s| s.se).collect())
}

/// Variance factors of the dispersion-variance variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionTerms {
    pub v_l_m: f64,
    pub v_u_m: f64,
    pub se_v_l_m: f64,
}

/// `v_l^M = tr(H₂ E[(XᵀDX)⁻¹])` and `v_u^M = (n-1)/n tr(H₂ H_g⁻¹)` with
/// `H₂ = E[XᵀD²X]`.
pub fn v_m_terms(
    pool: &UnlabeledPool,
    n: usize,
    link: &Link,
    beta_eval: &DVector<f64>,
    spec: ResampleSpec,
) -> Result<DispersionTerms> {
    let spec = ResampleSpec { block_size: n, ..spec };
    check_inputs(pool, n, beta_eval)?;
    spec.validate(pool.m())?;
    let pt = pool_terms(pool, n, link, beta_eval)?;
    let hg_inv = SpdFactor::new(&pt.hg, "H_g")?.inverse();
    let nf = n as f64;
    let v_u_m = (nf - 1.0) / nf * trace_product(&pt.h2, &hg_inv);
    let fold = fold_draws(pool, spec, DEFAULT_BATCHES, ScalarAcc::default, |acc, x| {
        let d = (x * beta_eval).map(|e| link.gprime(e));
        let Ok(a) = SpdFactor::new(&weighted_gram(x, &d), "XᵀDX") else { return false };
        acc.push(a.solve_mat(&pt.h2).trace());
        true
    })?;
    let mut all = ScalarAcc::default();
    fold.batches.iter().for_each(|(a, _)| all.merge(a));
    let s = all.summary();
    Ok(DispersionTerms { v_l_m: s.mean, v_u_m, se_v_l_m: s.se })
}

/// `α^M = σ²(v_l^M - v_u^M)/(B + σ²(v_l^M - v_u^M))`.
pub fn alpha_m_dispersion(sigma2: f64, b: f64, v_l_m: f64, v_u_m: f64) -> Result<f64> {
    if !(v_l_m > v_u_m) {
        return Err(Error::precondition(format!("v_l^M = {v_l_m} must exceed v_u^M = {v_u_m}")));
    }
    let gap = sigma2 * (v_l_m - v_u_m);
    let den = b + gap;
    if !(den > 0.0) {
        return Err(Error::precondition("B + σ²(v_l^M - v_u^M) must be positive"));
    }
    Ok(gap / den)
}
