//! Over-parameterized (`p > n`) linear interpolators: minimum-norm,
//! minimum-variance and their linear mixture.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, trace_product, SpdFactor};
use crate::moments::{fold_draws, DesignSource, ResampleSpec};
use crate::stats::{ScalarAcc, DEFAULT_BATCHES};

/// Iteration cap and tolerance of the noise/signal scheme.
pub const MAX_ITER: usize = 100;
pub const ITER_TOL: f64 = 1e-10;

fn check_overparameterized(n: usize, p: usize) -> Result<()> {
    if p <= n {
        return Err(Error::precondition(format!("interpolators need p > n (n = {n}, p = {p})")));
    }
    Ok(())
}

/// `ŵ = Xᵀ(XXᵀ)⁻¹Y`.
pub fn fit_min_norm(data: &LabeledSet) -> Result<DVector<f64>> {
    check_overparameterized(data.n(), data.p())?;
    let k = symmetrize(&(data.x() * data.x().transpose()));
    let f = SpdFactor::new(&k, "XXᵀ")?;
    Ok(data.x().tr_mul(&f.solve_vec(data.y())))
}

/// Factor of a covariance used by the minimum-variance interpolator.
#[derive(Debug, Clone)]
pub struct SigmaFactor {
    factor: SigmaSolve,
    trace: f64,
}

#[derive(Debug, Clone)]
enum SigmaSolve {
    Diagonal { d: DVector<f64>, inv: DVector<f64> },
    Dense { sigma: DMatrix<f64>, f: SpdFactor },
}

impl SigmaFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let not_pd = || Error::Singular("Σ is not positive definite".into());
        let p = sigma.nrows();
        if !sigma.is_square() {
            return Err(Error::Shape("Σ must be square".into()));
        }
        let diagonal = (0..p).all(|j| (0..p).all(|i| i == j || sigma[(i, j)] == 0.0));
        let factor = if diagonal {
            let d = sigma.diagonal();
            let max = d.max();
            if !(d.min() > 0.0) || max / d.min() > crate::linalg::COND_LIMIT {
                return Err(not_pd());
            }
            SigmaSolve::Diagonal { inv: d.map(|v| 1.0 / v), d: d.clone_owned() }
        } else {
            {
            let sigma = symmetrize(sigma);
            let f = SpdFactor::new(&sigma, "Σ").map_err(|_| not_pd())?;
            SigmaSolve::Dense { sigma, f }
        }
        };
        Ok(Self { factor, trace: sigma.trace() })
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn p(&self) -> usize {
        match &self.factor {
            SigmaSolve::Diagonal { d, .. } => d.len(),
            SigmaSolve::Dense { f, .. } => f.dim(),
        }
    }

    /// `Σ⁻¹ B`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            SigmaSolve::Diagonal { inv, .. } => {
                let mut out = b.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= inv[i];
                }
                out
            }
            SigmaSolve::Dense { f, .. } => f.solve_mat(b),
        }
    }

    /// `X Σ Xᵀ` for a design `X` with `p` columns.
    pub fn sandwich(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            SigmaSolve::Diagonal { d, .. } => {
                let mut xd = x.clone();
                for (j, mut col) in xd.column_iter_mut().enumerate() {
                    col *= d[j];
                }
                symmetrize(&(&xd * x.transpose()))
            }
            SigmaSolve::Dense { sigma, .. } => symmetrize(&(x * sigma * x.transpose())),
        }
    }

    /// `wᵀ Σ w`.
    pub fn quad(&self, w: &DVector<f64>) -> f64 {
        match &self.factor {
            SigmaSolve::Diagonal { d, .. } => w.iter().zip(d.iter()).map(|(a, b)| a * a * b).sum(),
            SigmaSolve::Dense { sigma, .. } => w.dot(&(sigma * w)),
        }
    }
}

/// `w̃ = Σ⁻¹Xᵀ(XΣ⁻¹Xᵀ)⁻¹Y`.
pub fn fit_min_variance(data: &LabeledSet, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    fit_min_variance_with(data, &SigmaFactor::new(sigma)?)
}

/// [`fit_min_variance`] with a prefactored `Σ`.
pub fn fit_min_variance_with(data: &LabeledSet, sigma: &SigmaFactor) -> Result<DVector<f64>> {
    check_overparameterized(data.n(), data.p())?;
    if sigma.p() != data.p() {
        return Err(Error::Shape(format!("Σ is {0}x{0} but p = {1}", sigma.p(), data.p())));
    }
    let si_xt = sigma.solve_mat(&data.x().transpose());
    let w = symmetrize(&(data.x() * &si_xt));
    let f = SpdFactor::new(&w, "XΣ⁻¹Xᵀ")?;
    Ok(si_xt * f.solve_vec(data.y()))
}

/// Bias and variance factors of `ŵ` (`_l`) and `w̃` (`_u`): for `w ~ N(0, τ²I)`
/// the reducible errors are `τ² b + σ² v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpRiskTerms {
    pub b_l: f64,
    pub v_l: f64,
    pub b_u: f64,
    pub v_u: f64,
    pub se_b_l: f64,
    pub se_v_l: f64,
    pub se_b_u: f64,
    pub se_v_u: f64,
    pub draws_used: usize,
    pub draws_skipped: usize,
}

impl InterpRiskTerms {
    /// Gaussian closed forms for a spiked diagonal `Σ` with `p_tilde` entries
    /// equal to `major` and the rest negligible.
    pub fn spiked_closed_form(n: usize, p: usize, p_tilde: usize, major: f64, trace: f64) -> Result<Self> {
        if p_tilde <= n + 1 || p <= n + 1 {
            return Err(Error::precondition(format!("closed forms need p, p̃ > n + 1 (n = {n}, p = {p}, p̃ = {p_tilde})")));
        }
        let (nf, pf, pt) = (n as f64, p as f64, p_tilde as f64);
        Ok(Self {
            b_l: major * (pt - nf),
            v_l: nf / (pt - nf - 1.0),
            b_u: trace * (1.0 - nf / pf),
            v_u: nf / (pf - nf - 1.0),
            se_b_l: 0.0,
            se_v_l: 0.0,
            se_b_u: 0.0,
            se_v_u: 0.0,
            draws_used: 0,
            draws_skipped: 0,
        })
    }

    /// `τ² b_l + σ² v_l`, the reducible error of `ŵ`.
    pub fn r_min_norm(&self, sigma2: f64, tau2: f64) -> f64 {
        tau2 * self.b_l + sigma2 * self.v_l
    }

    /// `τ² b_u + σ² v_u`, the reducible error of `w̃`.
    pub fn r_min_variance(&self, sigma2: f64, tau2: f64) -> f64 {
        tau2 * self.b_u + sigma2 * self.v_u
    }
}

#[derive(Clone, Default)]
struct InterpAcc {
    b_l: ScalarAcc,
    v_l: ScalarAcc,
    b_u: ScalarAcc,
    v_u: ScalarAcc,
}

/// Monte Carlo estimates of the interpolator risk factors over designs of
/// `n` rows drawn from `sampler` (whose covariance is `sigma`).
pub fn interp_risk_terms<S: DesignSource + ?Sized>(
    sigma: &DMatrix<f64>,
    n: usize,
    sampler: &S,
    spec: ResampleSpec,
) -> Result<InterpRiskTerms> {
    let p = sigma.nrows();
    if sampler.p() != p {
        return Err(Error::Shape(format!("sampler has p = {} but Σ is {p}x{p}", sampler.p())));
    }
    if p <= n + 1 {
        return Err(Error::precondition(format!("interpolator risk terms need p > n + 1 (n = {n}, p = {p})")));
    }
    let sf = SigmaFactor::new(sigma)?;
    let tr = sf.trace();
    let spec = ResampleSpec { block_size: n, ..spec };
    let fold = fold_draws(sampler, spec, DEFAULT_BATCHES, InterpAcc::default, |acc, x| {
        let k = symmetrize(&(x * x.transpose()));
        let Ok(kf) = SpdFactor::new(&k, "XXᵀ") else { return false };
        let si_xt = sf.solve_mat(&x.transpose());
        let w = symmetrize(&(x * &si_xt));
        let Ok(wf) = SpdFactor::new(&w, "XΣ⁻¹Xᵀ") else { return false };
        let m = sf.sandwich(x);
        let k_inv = kf.inverse();
        let km = &k_inv * &m;
        acc.b_l.push(tr - km.trace());
        acc.v_l.push(trace_product(&km, &k_inv));
        let w_inv = wf.inverse();
        acc.b_u.push(tr - trace_product(&w_inv, &k));
        acc.v_u.push(w_inv.trace());
        true
    })?;
    let mut all = InterpAcc::default();
    let mut used = 0;
    for (a, c) in &fold.batches {
        all.b_l.merge(&a.b_l);
        all.v_l.merge(&a.v_l);
        all.b_u.merge(&a.b_u);
        all.v_u.merge(&a.v_u);
        used += c;
    }
    let (b_l, v_l, b_u, v_u) = (all.b_l.summary(), all.v_l.summary(), all.b_u.summary(), all.v_u.summary());
    Ok(InterpRiskTerms {
        b_l: b_l.mean,
        v_l: v_l.mean,
        b_u: b_u.mean,
        v_u: v_u.mean,
        se_b_l: b_l.se,
        se_v_l: v_l.se,
        se_b_u: b_u.se,
        se_v_u: v_u.se,
        draws_used: used,
        draws_skipped: fold.skipped,
    })
}

/// `α*_w = σ²(v_l - v_u)/(τ²(b_u - b_l) + σ²(v_l - v_u))` and the reducible
/// error it attains.
///
/// Orderings violated by less than three standard errors are treated as ties.
pub fn alpha_star_interp(sigma2: f64, tau2: f64, terms: &InterpRiskTerms) -> Result<(f64, f64)> {
    let mut dv = terms.v_l - terms.v_u;
    let mut db = terms.b_u - terms.b_l;
    let tol_v = 3.0 * (terms.se_v_l.powi(2) + terms.se_v_u.powi(2)).sqrt();
    let tol_b = 3.0 * (terms.se_b_l.powi(2) + terms.se_b_u.powi(2)).sqrt();
    if dv < -tol_v || db < -tol_b {
        return Err(Error::precondition(format!(
            "ordering violated: v_l - v_u = {dv}, b_u - b_l = {db}"
        )));
    }
    dv = dv.max(0.0);
    db = db.max(0.0);
    let gap = sigma2 * dv;
    let den = tau2 * db + gap;
    if !(den > 0.0) {
        return Err(Error::precondition("τ²(b_u - b_l) + σ²(v_l - v_u) must be positive"));
    }
    let r0 = terms.r_min_norm(sigma2, tau2);
    Ok((gap / den, r0 - gap * gap / den))
}

/// Unbiased noise estimate for known signal level `tau2`:
/// `(Yᵀ(XXᵀ)⁻²Y - τ² tr((XXᵀ)⁻¹)) / tr((XXᵀ)⁻²)`. Not clipped.
pub fn sigma2_known_tau(data: &LabeledSet, tau2: f64) -> Result<f64> {
    let q = GramQuantities::new(data)?;
    Ok(q.sigma2(tau2))
}

struct GramQuantities {
    yk2y: f64,
    tr_k1: f64,
    tr_k2: f64,
}

impl GramQuantities {
    fn new(data: &LabeledSet) -> Result<Self> {
        check_overparameterized(data.n(), data.p())?;
        let k = symmetrize(&(data.x() * data.x().transpose()));
        let f = SpdFactor::new(&k, "XXᵀ")?;
        let k_inv = f.inverse();
        let ky = f.solve_vec(data.y());
        Ok(Self { yk2y: ky.norm_squared(), tr_k1: k_inv.trace(), tr_k2: k_inv.norm_squared() })
    }

    fn sigma2(&self, tau2: f64) -> f64 {
        (self.yk2y - tau2 * self.tr_k1) / self.tr_k2
    }
}

/// Noise and signal estimates in the `p > n` regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSignalInterp {
    pub sigma2_hat: f64,
    pub tau2_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternate between the noise estimate at the current signal level and the
/// signal estimate `max{(ΣY²/n - σ̂²)/tr(Σ), 0}`, starting from
/// `τ̂² = ŵᵀΣŵ/tr(Σ)`.
pub fn iterate_sigma_tau(data: &LabeledSet, sigma: &DMatrix<f64>) -> Result<NoiseSignalInterp> {
    if sigma.nrows() != data.p() || !sigma.is_square() {
        return Err(Error::Shape(format!("Σ is {}x{} but p = {}", sigma.nrows(), sigma.ncols(), data.p())));
    }
    let q = GramQuantities::new(data)?;
    let w = fit_min_norm(data)?;
    let tr = sigma.trace();
    if !(tr > 0.0) {
        return Err(Error::domain("tr(Σ) must be positive"));
    }
    let mean_y2 = data.y().norm_squared() / data.n() as f64;
    let mut tau2 = (w.dot(&(sigma * &w)) / tr).max(0.0);
    // no previous noise value on the first pass, so only τ̂² is compared there
    let mut sigma2 = f64::NAN;
    for it in 1..=MAX_ITER {
        let s_new = q.sigma2(tau2).max(0.0);
        let t_new = ((mean_y2 - s_new) / tr).max(0.0);
        let s_change = if sigma2.is_nan() { 0.0 } else { (s_new - sigma2).abs() };
        let t_change = (t_new - tau2).abs();
        sigma2 = s_new;
        tau2 = t_new;
        if s_change < ITER_TOL && t_change < ITER_TOL {
            return Ok(NoiseSignalInterp { sigma2_hat: sigma2, tau2_hat: tau2, iterations: it, converged: true });
        }
    }
    Ok(NoiseSignalInterp { sigma2_hat: sigma2, tau2_hat: tau2, iterations: MAX_ITER, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(y: f64) -> LabeledSet {
        LabeledSet::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, y)).unwrap()
    }

    #[test]
    fn hand_examples() {
        let w = fit_min_norm(&toy(2.0)).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25]));
        let wt = fit_min_variance(&toy(2.0), &sigma).unwrap();
        assert!((wt[0] - 0.4).abs() < 1e-14 && (wt[1] - 1.6).abs() < 1e-14);
        assert!((sigma2_known_tau(&toy(3.0), 0.0).unwrap() - 9.0).abs() < 1e-12);
        assert!((sigma2_known_tau(&toy(3.0), 1.0).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_response_iteration() {
        let r = iterate_sigma_tau(&toy(0.0), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!((r.sigma2_hat, r.tau2_hat), (0.0, 0.0));
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
    }
}
