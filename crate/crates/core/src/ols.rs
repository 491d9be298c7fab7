//! Squared-loss estimators: supervised, semi-supervised, their linear and
//! loss-based mixtures, and the risk terms used to choose a mixing ratio.
//!
//! Labeled data are expected in the pool's centered coordinates. The
//! semi-supervised fit only depends on the sample covariance of `X` and `Y`,
//! which is shift invariant, but the supervised and mixed fits are not.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, UnlabeledPool};
use crate::error::{Error, Result};
use crate::linalg::{centered_gram, column_means, symmetrize, trace_product, SpdFactor};
use crate::moments::{build_moments, fold_draws, DesignSource, PopulationMoments, ResampleSpec};
use crate::stats::{argmin, batch_means, unit_grid, BatchedMatrix, MeanSe, ScalarAcc, DEFAULT_BATCHES};

/// Default number of grid points for the loss-mixed ratio search.
pub const DEFAULT_GRID_SIZE: usize = 51;

/// Default `α` grid: 51 equally spaced points on `[0, 1]`.
pub fn default_grid() -> Vec<f64> {
    unit_grid(DEFAULT_GRID_SIZE)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("mixing ratio {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn check_p(data: &LabeledSet, p: usize) -> Result<()> {
    if data.p() != p {
        return Err(Error::Shape(format!("labeled data have p = {} but moments have p = {p}", data.p())));
    }
    Ok(())
}

/// `XᵀY - n X̄ Ȳ`, i.e. `n` times the sample covariance of the columns of `X` with `Y`.
fn centered_cross(data: &LabeledSet, weight: f64) -> DVector<f64> {
    let n = data.n() as f64;
    let xbar = column_means(data.x());
    data.x().tr_mul(data.y()) - xbar * (weight * n * data.y_mean())
}

/// `β̂ = (XᵀX)⁻¹XᵀY`.
pub fn fit_ols_supervised(data: &LabeledSet) -> Result<DVector<f64>> {
    let gram = data.x().tr_mul(data.x());
    let f = SpdFactor::new(&gram, "XᵀX")?;
    Ok(f.solve_vec(&data.x().tr_mul(data.y())))
}

/// `β̆ = H⁻¹(XᵀY - n X̄ Ȳ)` with `H = n E[xxᵀ]` from the pool.
pub fn fit_ols_semisupervised(data: &LabeledSet, moments: &PopulationMoments) -> Result<DVector<f64>> {
    check_p(data, moments.p())?;
    let h = moments.with_n(data.n())?;
    let f = SpdFactor::new(h.h(), "H")?;
    Ok(f.solve_vec(&centered_cross(data, 1.0)))
}

/// `β̃ = (m/n)(ZᵀZ)⁻¹XᵀY`, the semi-supervised estimator without the
/// total-information assumption.
pub fn fit_finite_m_semisupervised(data: &LabeledSet, pool: &UnlabeledPool) -> Result<DVector<f64>> {
    if data.p() != pool.p() {
        return Err(Error::Shape(format!("labeled p = {} but pool p = {}", data.p(), pool.p())));
    }
    let ztz = pool.z().tr_mul(pool.z());
    let f = SpdFactor::new(&ztz, "ZᵀZ")?;
    let scale = pool.m() as f64 / data.n() as f64;
    Ok(f.solve_vec(&data.x().tr_mul(data.y())) * scale)
}

/// `(1 - α) a + α b`.
pub fn mix_linear(a: &DVector<f64>, b: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cannot mix vectors of length {} and {}", a.len(), b.len())));
    }
    if !alpha.is_finite() {
        return Err(Error::domain("mixing ratio must be finite"));
    }
    Ok(a * (1.0 - alpha) + b * alpha)
}

/// `S_α = (αH + (1 - α)XᵀX)⁻¹` as a factor.
fn blend_factor(h: &DMatrix<f64>, gram: &DMatrix<f64>, alpha: f64) -> Result<SpdFactor> {
    let a = symmetrize(&(h * alpha + gram * (1.0 - alpha)));
    SpdFactor::new(&a, "αH + (1-α)XᵀX")
}

/// Minimizer of the loss-mixed objective, `β̈_α = S_α(XᵀY - α n X̄ Ȳ)`.
pub fn fit_loss_mixed_ols(data: &LabeledSet, moments: &PopulationMoments, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    check_p(data, moments.p())?;
    let h = moments.with_n(data.n())?;
    let gram = data.x().tr_mul(data.x());
    let f = blend_factor(h.h(), &gram, alpha)?;
    Ok(f.solve_vec(&centered_cross(data, alpha)))
}

/// Loss-mixed objective `(1-α) L̂(β) + α L̆(β)` for the identity link, with
/// pool expectations taken from `moments`.
pub fn loss_mixed_ols_objective(data: &LabeledSet, moments: &PopulationMoments, alpha: f64, beta: &DVector<f64>) -> f64 {
    let n = data.n() as f64;
    let fitted = data.x() * beta;
    let sup = fitted.iter().zip(data.y().iter()).map(|(f, y)| 0.5 * f * f - f * y).sum::<f64>() / n;
    let cross = centered_cross(data, 1.0) / n;
    let semi = 0.5 * beta.dot(&(moments.exx() * beta)) - beta.dot(&cross);
    (1.0 - alpha) * sup + alpha * semi
}

/// Variance and bias factors of `β̂` and `β̆`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsRiskTerms {
    pub v_l: f64,
    pub v_u: f64,
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    pub b_u_hat: f64,
    pub se_v_l: f64,
    pub se_b_hat: f64,
    pub se_b_u_hat: f64,
    pub blocks_used: usize,
    pub blocks_skipped: usize,
}

/// `v_u = (n - 1) p / n²`.
pub fn v_u_ols(n: usize, p: usize) -> f64 {
    let n = n as f64;
    (n - 1.0) * p as f64 / (n * n)
}

#[derive(Clone)]
struct TermAcc {
    v_l: ScalarAcc,
    m1: DMatrix<f64>,
}

/// Design expectations behind [`OlsRiskTerms`], computed once per `(pool, n)`
/// and reusable for any plug-in coefficient vector.
///
/// Per draw: `v_l = tr((XᵀX)⁻¹H)/n` and the bias matrix
/// `M = (C H⁻¹ C - 2C + H)/n` with `C = XᵀX - n x̄x̄ᵀ`, so that the bias of
/// `β̆` at `β` is `βᵀ E[M] β = E[(β̆ - β)ᵀ H (β̆ - β)]/n` in the noiseless case.
#[derive(Debug, Clone)]
pub struct OlsRiskTable {
    n: usize,
    p: usize,
    v_l: MeanSe,
    m1: BatchedMatrix,
    used: usize,
    skipped: usize,
}

impl OlsRiskTable {
    pub fn build<S: DesignSource + ?Sized>(source: &S, moments: &PopulationMoments, spec: ResampleSpec) -> Result<Self> {
        let n = spec.block_size;
        let p = moments.p();
        if n <= p {
            return Err(Error::precondition(format!("supervised risk terms need n > p (n = {n}, p = {p})")));
        }
        let mom = moments.with_n(n)?;
        let h = mom.h().clone();
        let h_inv = SpdFactor::new(&h, "H")?;
        let nf = n as f64;
        let fold = fold_draws(
            source,
            spec,
            DEFAULT_BATCHES,
            || TermAcc { v_l: ScalarAcc::default(), m1: DMatrix::zeros(p, p) },
            |acc, x| {
                let gram = x.tr_mul(x);
                let Ok(g) = SpdFactor::new(&gram, "XᵀX") else { return false };
                acc.v_l.push(g.solve_mat(&h).trace() / nf);
                let c = centered_gram(x);
                let chc = &c * h_inv.solve_mat(&c);
                acc.m1 += symmetrize(&(chc - &c * 2.0 + &h)) / nf;
                true
            },
        )?;
        let mut v_l = ScalarAcc::default();
        let mut sums = Vec::with_capacity(fold.batches.len());
        let mut used = 0;
        for (acc, count) in fold.batches {
            v_l.merge(&acc.v_l);
            used += count;
            sums.push((acc.m1, count));
        }
        Ok(Self { n, p, v_l: v_l.summary(), m1: BatchedMatrix::from_sums(sums), used, skipped: fold.skipped })
    }

    /// Risk terms with the bias evaluated at `beta`.
    pub fn terms(&self, beta: &DVector<f64>) -> Result<OlsRiskTerms> {
        if beta.len() != self.p {
            return Err(Error::Shape(format!("plug-in has length {} but p = {}", beta.len(), self.p)));
        }
        let b = self.m1.quad(beta);
        let bu = self.m1.trace();
        Ok(OlsRiskTerms {
            v_l: self.v_l.mean,
            v_u: v_u_ols(self.n, self.p),
            b_hat: b.mean.max(0.0),
            b_u_hat: bu.mean.max(0.0),
            se_v_l: self.v_l.se,
            se_b_hat: b.se,
            se_b_u_hat: bu.se,
            blocks_used: self.used,
            blocks_skipped: self.skipped,
        })
    }

    /// Averaged bias matrix `E[M]`.
    pub fn bias_matrix(&self) -> &DMatrix<f64> {
        self.m1.mean()
    }
}

/// Risk terms of `β̂` and `β̆` for designs of `n` rows drawn from `pool`,
/// with the bias of `β̆` evaluated at `beta_plugin`.
pub fn ols_risk_terms(pool: &UnlabeledPool, n: usize, beta_plugin: &DVector<f64>, spec: ResampleSpec) -> Result<OlsRiskTerms> {
    let (centered, moments) = build_moments(pool, n)?;
    let spec = ResampleSpec { block_size: n, ..spec };
    spec.validate(centered.m())?;
    OlsRiskTable::build(&centered, &moments, spec)?.terms(beta_plugin)
}

/// Noise and signal level estimates in the `n > p` regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSignalOls {
    pub sigma2_hat: f64,
    pub tau2_hat: f64,
}

/// `σ̂² = RSS(β̂)/(n - p)` and `τ̂² = max{(ΣY²/n - σ̂²)/tr(E[xxᵀ]), 0}`.
pub fn noise_signal_ols(data: &LabeledSet, beta_hat: &DVector<f64>, moments: &PopulationMoments) -> Result<NoiseSignalOls> {
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(Error::precondition(format!(
            "noise estimate needs n > p (n = {n}, p = {p}); use the interpolator estimators for p >= n"
        )));
    }
    check_p(data, moments.p())?;
    if beta_hat.len() != p {
        return Err(Error::Shape(format!("coefficients have length {} but p = {p}", beta_hat.len())));
    }
    let resid = data.y() - data.x() * beta_hat;
    let sigma2_hat = (resid.norm_squared() / (n - p) as f64).max(0.0);
    let tr = moments.exx().trace();
    let tau2_hat = if tr > 0.0 { ((data.y().norm_squared() / n as f64 - sigma2_hat) / tr).max(0.0) } else { 0.0 };
    Ok(NoiseSignalOls { sigma2_hat, tau2_hat })
}

/// Optimal linear mixing ratio `α* = σ²(v_l - v_u)/(B + σ²(v_l - v_u))` and
/// the reducible error it attains.
pub fn alpha_star_ols(sigma2: f64, b: f64, v_l: f64, v_u: f64) -> Result<(f64, f64)> {
    if !(v_l > v_u) {
        return Err(Error::precondition(format!("v_l = {v_l} must exceed v_u = {v_u}")));
    }
    if v_u < 0.0 || b < 0.0 || sigma2 < 0.0 {
        return Err(Error::precondition("v_u, B and σ² must be nonnegative"));
    }
    let gap = sigma2 * (v_l - v_u);
    let den = b + gap;
    if !(den > 0.0) {
        return Err(Error::precondition("B + σ²(v_l - v_u) must be positive"));
    }
    let alpha = gap / den;
    let r = sigma2 * v_l - gap * gap / den;
    Ok((alpha, r))
}

/// Reducible error of the linear mixture at `alpha`.
pub fn r_dot_curve(alpha: f64, sigma2: f64, b: f64, v_l: f64, v_u: f64) -> f64 {
    let gap = sigma2 * (v_l - v_u);
    alpha * alpha * (b + gap) - 2.0 * alpha * gap + sigma2 * v_l
}

/// `α*` without total information:
/// `σ²(v_l - v_s̃)/(τ² b_ũ + σ²(v_l + v_ũ - 2 v_s̃))`.
pub fn alpha_star_finite_m(sigma2: f64, tau2: f64, b_ut: f64, v_ut: f64, v_st: f64, v_l: f64) -> Result<f64> {
    let den = tau2 * b_ut + sigma2 * (v_l + v_ut - 2.0 * v_st);
    if !(den > 0.0) {
        return Err(Error::precondition(format!("nonpositive denominator {den}")));
    }
    Ok(sigma2 * (v_l - v_st) / den)
}

/// Estimated risk over an `α` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub alphas: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub argmin_alpha: f64,
}

impl RiskCurve {
    pub fn from_values(alphas: Vec<f64>, r_hat: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 || alphas.len() != r_hat.len() || alphas.len() != se.len() {
            return Err(Error::Shape(format!(
                "risk curve needs matching grids of length >= 2 (got {}, {}, {})",
                alphas.len(),
                r_hat.len(),
                se.len()
            )));
        }
        let i = argmin(&r_hat).ok_or_else(|| Error::domain("risk curve has no finite value"))?;
        Ok(Self { argmin_alpha: alphas[i], alphas, r_hat, se })
    }

    pub fn min_value(&self) -> f64 {
        self.r_hat.iter().cloned().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn check_grid(grid: &[f64], min_len: usize) -> Result<()> {
    if grid.len() < min_len {
        return Err(Error::precondition(format!("grid needs at least {min_len} points, got {}", grid.len())));
    }
    grid.iter().try_for_each(|&a| check_alpha(a))
}

/// `ξ_α = 1 - (2α - α²)/n`.
pub fn xi(alpha: f64, n: usize) -> f64 {
    1.0 - (2.0 * alpha - alpha * alpha) / n as f64
}

#[derive(Clone)]
struct DdotAcc {
    bias: Vec<DMatrix<f64>>,
    var: Vec<f64>,
}

/// Design expectations for the loss-mixed risk over an `α` grid, computed
/// once per `(pool, n)`.
///
/// Per draw and `α`: `Δ_α = S_α(XᵀX - α n x̄x̄ᵀ) - I`, bias matrix
/// `Δ_αᵀ H Δ_α / n` and variance factor `ξ_α tr(H S_α XᵀX S_α)/n`.
#[derive(Debug, Clone)]
pub struct DdotTable {
    alphas: Vec<f64>,
    /// Per `α`: batch means of the bias matrix.
    bias: Vec<Vec<(DMatrix<f64>, usize)>>,
    /// Per `α`: batch means of the variance factor.
    var: Vec<Vec<(f64, usize)>>,
    p: usize,
}

impl DdotTable {
    pub fn build<S: DesignSource + ?Sized>(
        source: &S,
        moments: &PopulationMoments,
        grid: &[f64],
        spec: ResampleSpec,
    ) -> Result<Self> {
        check_grid(grid, 2)?;
        let n = spec.block_size;
        let p = moments.p();
        let mom = moments.with_n(n)?;
        let h = mom.h().clone();
        let nf = n as f64;
        let k = grid.len();
        let eye = DMatrix::<f64>::identity(p, p);
        let fold = fold_draws(
            source,
            spec,
            DEFAULT_BATCHES,
            || DdotAcc { bias: vec![DMatrix::zeros(p, p); k], var: vec![0.0; k] },
            |acc, x| {
                let gram = symmetrize(&x.tr_mul(x));
                let xbar = column_means(x);
                let outer = &xbar * xbar.transpose() * nf;
                let mut bias = Vec::with_capacity(k);
                let mut var = Vec::with_capacity(k);
                for &a in grid {
                    let Ok(s) = blend_factor(&h, &gram, a) else { return false };
                    let delta = s.solve_mat(&(&gram - &outer * a)) - &eye;
                    bias.push(symmetrize(&(delta.transpose() * &h * &delta)) / nf);
                    let sgs = s.solve_mat(&s.solve_mat(&gram).transpose());
                    var.push(xi(a, n) * trace_product(&h, &sgs) / nf);
                }
                for (j, (b, v)) in bias.into_iter().zip(var).enumerate() {
                    acc.bias[j] += b;
                    acc.var[j] += v;
                }
                true
            },
        )?;
        let mut bias = vec![Vec::new(); k];
        let mut var = vec![Vec::new(); k];
        for (acc, count) in fold.batches {
            if count == 0 {
                continue;
            }
            let c = count as f64;
            for j in 0..k {
                bias[j].push((&acc.bias[j] / c, count));
                var[j].push((acc.var[j] / c, count));
            }
        }
        Ok(Self { alphas: grid.to_vec(), bias, var, p })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Estimated risk `βᵀ E[bias] β + σ² E[var]` at each grid point.
    pub fn curve(&self, beta: &DVector<f64>, sigma2: f64) -> Result<RiskCurve> {
        if beta.len() != self.p {
            return Err(Error::Shape(format!("plug-in has length {} but p = {}", beta.len(), self.p)));
        }
        let mut r_hat = Vec::with_capacity(self.alphas.len());
        let mut se = Vec::with_capacity(self.alphas.len());
        for (b, v) in self.bias.iter().zip(&self.var) {
            let per_batch: Vec<(f64, usize)> =
                b.iter().zip(v).map(|((bm, c), (vm, _))| (beta.dot(&(bm * beta)) + sigma2 * vm, *c)).collect();
            let s = batch_means(&per_batch);
            r_hat.push(s.mean);
            se.push(s.se);
        }
        RiskCurve::from_values(self.alphas.clone(), r_hat, se)
    }
}

/// Grid search for the loss-mixed ratio `α̃` from the estimated risk curve.
pub fn grid_search_alpha_ddot(
    data: &LabeledSet,
    pool: &UnlabeledPool,
    beta_plugin: &DVector<f64>,
    sigma2_hat: f64,
    grid: &[f64],
    spec: ResampleSpec,
) -> Result<RiskCurve> {
    check_grid(grid, 5)?;
    let n = data.n();
    let (centered, moments) = build_moments(pool, n)?;
    check_p(data, moments.p())?;
    let spec = ResampleSpec { block_size: n, ..spec };
    spec.validate(centered.m())?;
    DdotTable::build(&centered, &moments, grid, spec)?.curve(beta_plugin, sigma2_hat)
}
