//! Monte Carlo experiment engine.

use std::collections::BTreeMap;

use mssl_core::glm::{
    alpha_dot_glm, estimate_noise_glm, fit_glm_loss_mixed, fit_glm_semisupervised, fit_glm_supervised, glm_risk_terms,
    grid_search_alpha_ddot_glm, GlmFitReport,
};
use mssl_core::interp::{
    alpha_star_interp, fit_min_norm, fit_min_variance_with, iterate_sigma_tau, sigma2_known_tau, interp_risk_terms,
    InterpRiskTerms, SigmaFactor,
};
use mssl_core::linalg::quad_form;
use mssl_core::moments::{DesignSource, GaussianDesign};
use mssl_core::ols::{
    alpha_star_ols, fit_loss_mixed_ols, fit_ols_semisupervised, fit_ols_supervised, mix_linear, noise_signal_ols,
    DdotTable, OlsRiskTable,
};
use mssl_core::rng::{derive_seed, stream};
use mssl_core::stats::mean_se;
use mssl_core::{build_moments, DMatrix, DVector, Link, PopulationMoments, ResampleSpec, UnlabeledPool};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Evaluation, ExperimentConfig, Preset};
use crate::covariance::{gen_sigma, rescale_to_trace};
use crate::dataset::{draw_response, BetaMode};
use crate::error::{Result, SimError};
use crate::estimator::{Estimator, Model};
use crate::pairwise::summarize_pairwise;

/// Largest tolerated fraction of failed replications.
pub const FAILURE_BUDGET: f64 = 0.05;

// stream tags
const POOL: u64 = 1;
const TERMS: u64 = 2;
const REP: u64 = 3;
const EVAL: u64 = 4;
const ORACLE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub preset: String,
    pub estimator: String,
    pub grid_name: String,
    pub grid_value: f64,
    pub mean_error: f64,
    pub se: f64,
    pub k_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub estimator_a: String,
    pub estimator_b: String,
    pub grid_value: f64,
    pub mean_diff: f64,
    pub se_diff: f64,
    pub t: f64,
    pub p: f64,
}

/// Raw per-replication output at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub grid_value: f64,
    pub estimators: Vec<String>,
    /// `errors[e][k]`: error of estimator `e` in the `k`-th successful replication.
    pub errors: Vec<Vec<f64>>,
    /// Per-replication plug-in quantities (`sigma2_hat`, `alpha_hat`, ...),
    /// aligned with `errors`; `NaN` where not computed.
    pub aux: BTreeMap<String, Vec<f64>>,
    /// Oracle quantities of the setting (`alpha_star`, `v_l`, ...).
    pub info: BTreeMap<String, f64>,
    pub attempted: usize,
    pub failed: usize,
}

impl CellRecord {
    pub fn errors_of(&self, estimator: &str) -> Option<&[f64]> {
        self.estimators.iter().position(|e| e == estimator).map(|i| self.errors[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub preset: Preset,
    pub grid_name: String,
    pub rows: Vec<ResultRow>,
    pub pairs: Vec<PairRow>,
    pub cells: Vec<CellRecord>,
}

impl ExperimentResult {
    pub fn cell(&self, grid_value: f64) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.grid_value == grid_value)
    }

    pub fn row(&self, estimator: &str, grid_value: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.grid_value == grid_value)
    }

    pub fn pair(&self, a: &str, b: &str, grid_value: f64) -> Option<&PairRow> {
        self.pairs
            .iter()
            .find(|r| r.estimator_a == a && r.estimator_b == b && r.grid_value == grid_value)
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().map(|c| c.failed).sum()
    }
}

/// One replication: errors per column and auxiliary values per aux name.
struct RepOut {
    errors: Vec<f64>,
    aux: Vec<f64>,
}

/// A batch of replications sharing one data-generating setting.
trait Scenario: Sync {
    /// `(estimator name, grid value)` per error column.
    fn columns(&self) -> Vec<(String, f64)>;
    fn aux_names(&self) -> &'static [&'static str];
    fn info(&self) -> BTreeMap<String, f64>;
    fn replicate(&self, seed: u64) -> mssl_core::Result<RepOut>;
}

/// Run `cfg`, on a dedicated pool when `cfg.threads` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SimError::config(format!("cannot start {t} worker threads: {e}")))?;
            pool.install(|| run_inner(cfg))
        }
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let estimators = cfg.parsed_estimators()?;
    let mut cells = Vec::new();
    match cfg.model() {
        Model::Ols => {
            let mut settings: BTreeMap<usize, OlsSetting> = BTreeMap::new();
            for (ci, (n, sigma2)) in cell_points(cfg).into_iter().enumerate() {
                if !settings.contains_key(&n) {
                    settings.insert(n, OlsSetting::build(cfg, &estimators, n)?);
                }
                let scn = OlsScenario::new(cfg, &estimators, &settings[&n], sigma2, grid_value(cfg, n, sigma2))?;
                cells.extend(run_scenario(cfg, &scn, ci as u64)?);
            }
        }
        Model::Glm => {
            let n = cfg.n[0];
            let setting = GlmSetting::build(cfg, n)?;
            for (ci, (n, sigma2)) in cell_points(cfg).into_iter().enumerate() {
                let scn = GlmScenario::new(cfg, &estimators, &setting, sigma2, grid_value(cfg, n, sigma2))?;
                cells.extend(run_scenario(cfg, &scn, ci as u64)?);
            }
        }
        Model::Interp => {
            let mut settings: BTreeMap<usize, InterpSetting> = BTreeMap::new();
            for (ci, (n, sigma2)) in cell_points(cfg).into_iter().enumerate() {
                if !settings.contains_key(&n) {
                    settings.insert(n, InterpSetting::build(cfg, n)?);
                }
                let scn = InterpScenario::new(cfg, &estimators, &settings[&n], sigma2, grid_value(cfg, n, sigma2))?;
                cells.extend(run_scenario(cfg, &scn, ci as u64)?);
            }
        }
    }
    assemble(cfg, cells)
}

/// `(n, sigma2)` per scenario; the alpha sweep is a single scenario.
fn cell_points(cfg: &ExperimentConfig) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for &n in &cfg.n {
        for &s in &cfg.sigma2 {
            out.push((n, s));
        }
    }
    out
}

fn grid_value(cfg: &ExperimentConfig, n: usize, sigma2: f64) -> f64 {
    match cfg.preset.grid_name() {
        "n" => n as f64,
        _ => sigma2,
    }
}

fn run_scenario(cfg: &ExperimentConfig, scn: &dyn Scenario, cell: u64) -> Result<Vec<CellRecord>> {
    let k = cfg.replications;
    let outs: Vec<mssl_core::Result<RepOut>> = (0..k as u64)
        .into_par_iter()
        .map(|r| scn.replicate(derive_seed(cfg.seed, &[REP, cell, r])))
        .collect();
    let columns = scn.columns();
    let aux_names = scn.aux_names();
    let mut errors = vec![Vec::with_capacity(k); columns.len()];
    let mut aux = vec![Vec::with_capacity(k); aux_names.len()];
    let mut failed = 0;
    let mut first_failure = None;
    for out in outs {
        match out {
            Ok(o) => {
                for (c, e) in errors.iter_mut().zip(o.errors) {
                    c.push(e);
                }
                for (c, a) in aux.iter_mut().zip(o.aux) {
                    c.push(a);
                }
            }
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > FAILURE_BUDGET * k as f64 || k - failed < 2 {
        return Err(SimError::FailureBudget { failed, total: k, first: first_failure.unwrap_or_default() });
    }
    let info = scn.info();
    let aux_map: BTreeMap<String, Vec<f64>> = aux_names.iter().map(|s| s.to_string()).zip(aux).collect();
    // split columns by grid value, keeping first-appearance order
    let mut values: Vec<f64> = Vec::new();
    for (_, v) in &columns {
        if !values.contains(v) {
            values.push(*v);
        }
    }
    Ok(values
        .into_iter()
        .map(|v| {
            let idx: Vec<usize> = (0..columns.len()).filter(|&i| columns[i].1 == v).collect();
            CellRecord {
                grid_value: v,
                estimators: idx.iter().map(|&i| columns[i].0.clone()).collect(),
                errors: idx.iter().map(|&i| errors[i].clone()).collect(),
                aux: aux_map.clone(),
                info: info.clone(),
                attempted: k,
                failed,
            }
        })
        .collect())
}

fn assemble(cfg: &ExperimentConfig, cells: Vec<CellRecord>) -> Result<ExperimentResult> {
    let preset = cfg.preset.name().to_string();
    let grid_name = cfg.preset.grid_name().to_string();
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for c in &cells {
        for (name, errs) in c.estimators.iter().zip(&c.errors) {
            let s = mean_se(errs);
            rows.push(ResultRow {
                preset: preset.clone(),
                estimator: name.clone(),
                grid_name: grid_name.clone(),
                grid_value: c.grid_value,
                mean_error: s.mean,
                se: s.se,
                k_effective: s.count,
            });
        }
        for a in 0..c.estimators.len() {
            for b in a + 1..c.estimators.len() {
                let diffs: Vec<f64> = c.errors[a].iter().zip(&c.errors[b]).map(|(x, y)| x - y).collect();
                let s = summarize_pairwise(&diffs)?;
                pairs.push(PairRow {
                    estimator_a: c.estimators[a].clone(),
                    estimator_b: c.estimators[b].clone(),
                    grid_value: c.grid_value,
                    mean_diff: s.mean,
                    se_diff: s.se,
                    t: s.t,
                    p: s.p,
                });
            }
        }
    }
    Ok(ExperimentResult { preset: cfg.preset, grid_name, rows, pairs, cells })
}

/// Generative covariance at `(n, p)`, rescaled when the config asks for it.
fn generative_sigma(cfg: &ExperimentConfig, n: usize, p: usize) -> Result<DMatrix<f64>> {
    let s = gen_sigma(&cfg.covariance.at(p, n))?;
    match cfg.sigma_trace {
        Some(t) => rescale_to_trace(&s, t),
        None => Ok(s),
    }
}

fn draw_pool(design: &GaussianDesign, m: usize, seed: u64) -> Result<UnlabeledPool> {
    let z = design.draw(m, seed, 0)?;
    Ok(UnlabeledPool::new(z)?)
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------- OLS

struct OlsSetting {
    n: usize,
    pool: UnlabeledPool,
    moments: PopulationMoments,
    eval: DMatrix<f64>,
    table: OlsRiskTable,
    ddot: Option<DdotTable>,
}

impl OlsSetting {
    fn build(cfg: &ExperimentConfig, estimators: &[Estimator], n: usize) -> Result<Self> {
        let p = cfg.p_for(n)?;
        let sigma = generative_sigma(cfg, n, p)?;
        let design = GaussianDesign::new(&sigma)?;
        let raw = draw_pool(&design, cfg.pool_size, derive_seed(cfg.seed, &[POOL, p as u64]))?;
        let (pool, moments) = build_moments(&raw, n)?;
        let eval = match cfg.evaluation {
            Evaluation::Pool => moments.exx().clone(),
            Evaluation::Population => sigma,
        };
        let spec = ResampleSpec::new(n, cfg.oracle_blocks, derive_seed(cfg.seed, &[TERMS, n as u64]));
        let table = OlsRiskTable::build(&pool, &moments, spec)?;
        let needs_ddot = estimators.iter().any(|e| matches!(e, Estimator::LossMixedTilde | Estimator::LossMixedOracle));
        let ddot = if needs_ddot {
            let spec = ResampleSpec::new(n, cfg.oracle_blocks, derive_seed(cfg.seed, &[TERMS, n as u64, 1]));
            Some(DdotTable::build(&pool, &moments, &cfg.search_grid(), spec)?)
        } else {
            None
        };
        Ok(Self { n, pool, moments, eval, table, ddot })
    }
}

struct OlsScenario<'a> {
    setting: &'a OlsSetting,
    estimators: Vec<Estimator>,
    columns: Vec<(String, f64)>,
    beta_mode: BetaMode,
    sigma2: f64,
    tau2: Option<f64>,
    v_l: f64,
    v_u: f64,
    b_u: f64,
    /// `α*` at the true parameters; per replication for random `β`.
    alpha_star: Option<f64>,
    alpha_ddot: Option<f64>,
    info: BTreeMap<String, f64>,
}

impl<'a> OlsScenario<'a> {
    fn new(cfg: &ExperimentConfig, estimators: &[Estimator], setting: &'a OlsSetting, sigma2: f64, gv: f64) -> Result<Self> {
        let p = setting.moments.p();
        let terms0 = setting.table.terms(&DVector::zeros(p))?;
        let (v_l, v_u, b_u) = (terms0.v_l, terms0.v_u, terms0.b_u_hat);
        let mut info = BTreeMap::from([
            ("v_l".to_string(), v_l),
            ("se_v_l".to_string(), terms0.se_v_l),
            ("v_u".to_string(), v_u),
            ("b_u".to_string(), b_u),
            ("n".to_string(), setting.n as f64),
            ("p".to_string(), p as f64),
            ("sigma2".to_string(), sigma2),
        ]);
        let (alpha_star, alpha_ddot) = match cfg.beta {
            BetaMode::Constant { value } => {
                let beta = DVector::from_element(p, value);
                let t = setting.table.terms(&beta)?;
                let (a, r) = alpha_star_ols(sigma2, t.b_hat, v_l, v_u)?;
                info.insert("B".into(), t.b_hat);
                info.insert("r_alpha_star".into(), r);
                let dd = match &setting.ddot {
                    Some(d) => {
                        let c = d.curve(&beta, sigma2)?;
                        info.insert("r_alpha_ddot".into(), c.min_value());
                        Some(c.argmin_alpha)
                    }
                    None => None,
                };
                (Some(a), dd)
            }
            BetaMode::RandomIid { tau2 } => {
                let (a, r) = alpha_star_ols(sigma2, tau2 * b_u, v_l, v_u)?;
                info.insert("B".into(), tau2 * b_u);
                info.insert("r_alpha_star".into(), r);
                info.insert("eta".into(), r / (sigma2 * v_l));
                (Some(a), None)
            }
        };
        if let Some(a) = alpha_star {
            info.insert("alpha_star".into(), a);
        }
        if let Some(a) = alpha_ddot {
            info.insert("alpha_ddot".into(), a);
        }
        let columns = expand_columns(estimators, &cfg.alpha, gv);
        Ok(Self {
            setting,
            estimators: estimators.to_vec(),
            columns,
            beta_mode: cfg.beta,
            sigma2,
            tau2: cfg.tau2(),
            v_l,
            v_u,
            b_u,
            alpha_star,
            alpha_ddot,
            info,
        })
    }
}

/// Error columns, expanding sweep families over `alphas`.
fn expand_columns(estimators: &[Estimator], alphas: &[f64], gv: f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for e in estimators {
        if e.is_sweep() {
            out.extend(alphas.iter().map(|&a| (e.to_string(), a)));
        } else {
            out.push((e.to_string(), gv));
        }
    }
    out
}

const OLS_AUX: &[&str] = &["sigma2_hat", "tau2_hat", "B_hat", "alpha_hat", "alpha_tau", "alpha_tilde"];

impl Scenario for OlsScenario<'_> {
    fn columns(&self) -> Vec<(String, f64)> {
        self.columns.clone()
    }

    fn aux_names(&self) -> &'static [&'static str] {
        OLS_AUX
    }

    fn info(&self) -> BTreeMap<String, f64> {
        self.info.clone()
    }

    fn replicate(&self, seed: u64) -> mssl_core::Result<RepOut> {
        let s = self.setting;
        let mut rng = stream(seed, &[]);
        let beta = self.beta_mode.draw(s.moments.p(), &mut rng).map_err(to_core)?;
        let data = draw_response(&s.pool, s.n, &beta, &Link::identity(), self.sigma2, &mut rng).map_err(to_core)?;
        let b_hat = fit_ols_supervised(&data)?;
        let b_breve = fit_ols_semisupervised(&data, &s.moments)?;
        let ns = noise_signal_ols(&data, &b_hat, &s.moments)?;
        let b_plug = match self.beta_mode {
            BetaMode::Constant { .. } => s.table.terms(&b_breve)?.b_hat,
            BetaMode::RandomIid { .. } => ns.tau2_hat * self.b_u,
        };
        let alpha_hat = alpha_or_zero(ns.sigma2_hat, b_plug, self.v_l, self.v_u)?;
        let alpha_tau = match self.tau2 {
            Some(t) => Some(alpha_or_zero(ns.sigma2_hat, t * self.b_u, self.v_l, self.v_u)?),
            None => None,
        };
        let needs_tilde = self.estimators.contains(&Estimator::LossMixedTilde);
        let alpha_tilde = match (&s.ddot, needs_tilde) {
            (Some(d), true) => Some(d.curve(&b_breve, ns.sigma2_hat)?.argmin_alpha),
            _ => None,
        };
        let alpha_oracle_ddot = match (self.alpha_ddot, &s.ddot, self.estimators.contains(&Estimator::LossMixedOracle)) {
            (Some(a), _, _) => Some(a),
            (None, Some(d), true) => Some(d.curve(&beta, self.sigma2)?.argmin_alpha),
            _ => None,
        };
        let err = |b: &DVector<f64>| quad_form(&s.eval, &(b - &beta));
        let loss = |a: f64| fit_loss_mixed_ols(&data, &s.moments, a);
        let need = |a: Option<f64>, what: &str| {
            a.ok_or_else(|| mssl_core::Error::precondition(format!("{what} is unavailable in this setting")))
        };
        let mut errors = Vec::with_capacity(self.columns.len());
        for e in &self.estimators {
            use Estimator::*;
            match *e {
                LinearMixedSweep | LossMixedSweep => {
                    for &(_, a) in self.columns.iter().filter(|c| c.0 == e.to_string()) {
                        let b = if *e == LinearMixedSweep { mix_linear(&b_hat, &b_breve, a)? } else { loss(a)? };
                        errors.push(err(&b));
                    }
                }
                _ => {
                    let b = match *e {
                        Supervised => b_hat.clone(),
                        Semisupervised => b_breve.clone(),
                        Adaptive => {
                            if ns.sigma2_hat * (self.v_l - self.v_u) > b_plug {
                                b_breve.clone()
                            } else {
                                b_hat.clone()
                            }
                        }
                        LinearMixedHat => mix_linear(&b_hat, &b_breve, alpha_hat)?,
                        LinearMixedTau => mix_linear(&b_hat, &b_breve, need(alpha_tau, "the known signal level")?)?,
                        LinearMixedOracle => mix_linear(&b_hat, &b_breve, need(self.alpha_star, "α*")?)?,
                        LinearMixed(a) => mix_linear(&b_hat, &b_breve, a)?,
                        LossMixedHat => loss(alpha_hat.min(1.0))?,
                        LossMixedTilde => loss(need(alpha_tilde, "α̃")?)?,
                        LossMixedOracle => loss(need(alpha_oracle_ddot, "α**")?)?,
                        LossMixed(a) => loss(a)?,
                        _ => unreachable!("validated estimator set"),
                    };
                    errors.push(err(&b));
                }
            }
        }
        let aux = vec![
            ns.sigma2_hat,
            ns.tau2_hat,
            b_plug,
            alpha_hat,
            nan_if_none(alpha_tau),
            nan_if_none(alpha_tilde),
        ];
        Ok(RepOut { errors, aux })
    }
}

/// `α*` formula with plug-ins; a zero noise estimate gives `α = 0`.
fn alpha_or_zero(sigma2: f64, b: f64, v_l: f64, v_u: f64) -> mssl_core::Result<f64> {
    if sigma2 <= 0.0 {
        return Ok(0.0);
    }
    Ok(alpha_star_ols(sigma2, b.max(0.0), v_l, v_u)?.0)
}

fn to_core(e: SimError) -> mssl_core::Error {
    match e {
        SimError::Core(c) => c,
        other => mssl_core::Error::precondition(other.to_string()),
    }
}

// ---------------------------------------------------------------- GLM

struct GlmSetting {
    n: usize,
    link: Link,
    beta: DVector<f64>,
    design: GaussianDesign,
    /// Centered fixed pool behind the oracle ratios.
    oracle_pool: UnlabeledPool,
    /// Evaluation rows with the true mean response at each.
    eval_z: DMatrix<f64>,
    eval_mu: DVector<f64>,
    eval_base: f64,
    oracle: mssl_core::glm::GlmQuadratic,
}

impl GlmSetting {
    fn build(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let p = cfg.p_for(n)?;
        let link = Link::by_name(&cfg.link)?;
        let sigma = generative_sigma(cfg, n, p)?;
        let design = GaussianDesign::new(&sigma)?;
        let raw = draw_pool(&design, cfg.pool_size, derive_seed(cfg.seed, &[POOL, p as u64]))?;
        let (oracle_pool, _) = raw.centered();
        let mut rng = stream(cfg.seed, &[ORACLE]);
        let beta = cfg.beta.draw(p, &mut rng)?;
        let eval_z = match cfg.evaluation {
            Evaluation::Pool => oracle_pool.z().clone(),
            Evaluation::Population => design.draw(cfg.pool_size, derive_seed(cfg.seed, &[EVAL, p as u64]), 0)?,
        };
        let eval_mu = (&eval_z * &beta).map(|e| link.g(e));
        let spec = ResampleSpec::new(n, cfg.oracle_blocks, derive_seed(cfg.seed, &[TERMS, n as u64]));
        let oracle = glm_risk_terms(&oracle_pool, n, &link, &beta, spec)?;
        let mut s = Self {
            n,
            link,
            beta: beta.clone(),
            design,
            oracle_pool,
            eval_z,
            eval_mu,
            eval_base: 0.0,
            oracle,
        };
        s.eval_base = s.raw_loss(&beta);
        Ok(s)
    }

    /// Mean canonical loss `G(zᵀb) - zᵀb μ(z)` over the evaluation rows.
    fn raw_loss(&self, b: &DVector<f64>) -> f64 {
        let eta = &self.eval_z * b;
        let m = eta.len() as f64;
        eta.iter().zip(self.eval_mu.iter()).map(|(&e, &mu)| self.link.big_g(e) - e * mu).sum::<f64>() / m
    }

    /// Prediction loss in excess of the true coefficients' loss.
    fn excess_loss(&self, b: &DVector<f64>) -> f64 {
        (self.raw_loss(b) - self.eval_base).max(0.0)
    }
}

struct GlmScenario<'a> {
    setting: &'a GlmSetting,
    estimators: Vec<Estimator>,
    columns: Vec<(String, f64)>,
    sigma2: f64,
    fit_pool_size: usize,
    fit_blocks: usize,
    grid: Vec<f64>,
    alpha_dot: Option<f64>,
    alpha_ddot: Option<f64>,
    info: BTreeMap<String, f64>,
}

impl<'a> GlmScenario<'a> {
    fn new(cfg: &ExperimentConfig, estimators: &[Estimator], setting: &'a GlmSetting, sigma2: f64, gv: f64) -> Result<Self> {
        let q = &setting.oracle;
        let grid = cfg.search_grid();
        let mut info = BTreeMap::from([
            ("v_l_g".to_string(), q.v_l_g),
            ("se_v_l_g".to_string(), q.se_v_l_g),
            ("v_u_g".to_string(), q.v_u_g),
            ("v_s_g".to_string(), q.v_s_g),
            ("se_v_s_g".to_string(), q.se_v_s_g),
            ("B_g".to_string(), q.b_g_hat),
            ("se_B_g".to_string(), q.se_b_g_hat),
            ("n".to_string(), setting.n as f64),
            ("p".to_string(), setting.beta.len() as f64),
            ("sigma2".to_string(), sigma2),
        ]);
        let alpha_dot = alpha_dot_glm(sigma2, q.b_g_hat, q.v_l_g, q.v_u_g, q.v_s_g).map(|r| r.0).ok();
        if let Some(a) = alpha_dot {
            info.insert("alpha_dot_raw".into(), a);
        }
        let alpha_dot = alpha_dot.map(|a| a.clamp(0.0, 1.0));
        let needs_ddot = estimators.contains(&Estimator::LossMixedOracle) || estimators.iter().any(|e| e.is_sweep());
        let alpha_ddot = if needs_ddot {
            let spec = ResampleSpec::new(setting.n, cfg.oracle_blocks, derive_seed(cfg.seed, &[TERMS, setting.n as u64, 1]));
            let c = grid_search_alpha_ddot_glm(&setting.oracle_pool, setting.n, &setting.link, &setting.beta, sigma2, &grid, spec)?;
            Some(c.argmin_alpha)
        } else {
            None
        };
        if let Some(a) = alpha_dot {
            info.insert("alpha_dot".into(), a);
        }
        if let Some(a) = alpha_ddot {
            info.insert("alpha_ddot".into(), a);
        }
        Ok(Self {
            setting,
            estimators: estimators.to_vec(),
            columns: expand_columns(estimators, &cfg.alpha, gv),
            sigma2,
            fit_pool_size: cfg.fit_pool_size,
            fit_blocks: cfg.fit_blocks,
            grid,
            alpha_dot,
            alpha_ddot,
            info,
        })
    }
}

const GLM_AUX: &[&str] = &["sigma2_hat", "alpha_hat", "alpha_tilde", "v_l_g_hat", "v_u_g_hat", "v_s_g_hat", "B_g_hat"];

fn converged(r: GlmFitReport) -> mssl_core::Result<DVector<f64>> {
    if r.converged {
        Ok(r.beta)
    } else {
        Err(mssl_core::Error::precondition(format!(
            "Newton iterations did not converge (step norm {:.3e} after {})",
            r.final_step_norm, r.iterations
        )))
    }
}

impl Scenario for GlmScenario<'_> {
    fn columns(&self) -> Vec<(String, f64)> {
        self.columns.clone()
    }

    fn aux_names(&self) -> &'static [&'static str] {
        GLM_AUX
    }

    fn info(&self) -> BTreeMap<String, f64> {
        self.info.clone()
    }

    fn replicate(&self, seed: u64) -> mssl_core::Result<RepOut> {
        use Estimator::*;
        let s = self.setting;
        let link = &s.link;
        let mut rng = stream(seed, &[]);
        let data = draw_response(&s.design, s.n, &s.beta, link, self.sigma2, &mut rng).map_err(to_core)?;
        let z = s.design.draw(self.fit_pool_size, rng.random(), 0)?;
        let (zc, _) = UnlabeledPool::new(z)?.centered();
        let b_hat = converged(fit_glm_supervised(&data, link)?)?;
        let b_breve = converged(fit_glm_semisupervised(&data, &zc, link)?)?;
        let spec = ResampleSpec::new(s.n, self.fit_blocks, rng.random());
        let has = |e: Estimator| self.estimators.contains(&e);
        let needs_noise = has(LinearMixedHat) || has(LossMixedHat) || has(LossMixedTilde);
        let needs_terms = has(LinearMixedHat) || has(LossMixedHat);
        let sigma2_hat = if needs_noise {
            Some(estimate_noise_glm(&data, &b_hat, &b_breve, &zc, link, spec)?.sigma2_hat)
        } else {
            None
        };
        let q_hat = if needs_terms { Some(glm_risk_terms(&zc, s.n, link, &b_breve, spec)?) } else { None };
        let alpha_hat = match (&q_hat, sigma2_hat) {
            (Some(q), Some(s2)) => Some(alpha_dot_glm(s2, q.b_g_hat, q.v_l_g, q.v_u_g, q.v_s_g)?.0.clamp(0.0, 1.0)),
            _ => None,
        };
        let alpha_tilde = match (has(LossMixedTilde), sigma2_hat) {
            (true, Some(s2)) => Some(grid_search_alpha_ddot_glm(&zc, s.n, link, &b_breve, s2, &self.grid, spec)?.argmin_alpha),
            _ => None,
        };
        let loss = |a: f64| -> mssl_core::Result<DVector<f64>> {
            if a == 0.0 {
                Ok(b_hat.clone())
            } else if a == 1.0 {
                Ok(b_breve.clone())
            } else {
                converged(fit_glm_loss_mixed(&data, &zc, link, a)?)
            }
        };
        let need = |a: Option<f64>, what: &str| {
            a.ok_or_else(|| mssl_core::Error::precondition(format!("{what} is unavailable in this setting")))
        };
        let mut errors = Vec::with_capacity(self.columns.len());
        for e in &self.estimators {
            match *e {
                LinearMixedSweep | LossMixedSweep => {
                    for &(_, a) in self.columns.iter().filter(|c| c.0 == e.to_string()) {
                        let b = if *e == LinearMixedSweep { mix_linear(&b_hat, &b_breve, a)? } else { loss(a)? };
                        errors.push(s.excess_loss(&b));
                    }
                }
                _ => {
                    let b = match *e {
                        Supervised => b_hat.clone(),
                        Semisupervised => b_breve.clone(),
                        LinearMixedHat => mix_linear(&b_hat, &b_breve, need(alpha_hat, "α̂")?)?,
                        LinearMixedOracle => mix_linear(&b_hat, &b_breve, need(self.alpha_dot, "α̇")?)?,
                        LinearMixed(a) => mix_linear(&b_hat, &b_breve, a)?,
                        LossMixedHat => loss(need(alpha_hat, "α̂")?)?,
                        LossMixedTilde => loss(need(alpha_tilde, "α̃")?)?,
                        LossMixedOracle => loss(need(self.alpha_ddot, "α̈")?)?,
                        LossMixed(a) => loss(a)?,
                        _ => unreachable!("validated estimator set"),
                    };
                    errors.push(s.excess_loss(&b));
                }
            }
        }
        let qv = |f: fn(&mssl_core::glm::GlmQuadratic) -> f64| q_hat.as_ref().map(f).unwrap_or(f64::NAN);
        let aux = vec![
            nan_if_none(sigma2_hat),
            nan_if_none(alpha_hat),
            nan_if_none(alpha_tilde),
            qv(|q| q.v_l_g),
            qv(|q| q.v_u_g),
            qv(|q| q.v_s_g),
            qv(|q| q.b_g_hat),
        ];
        Ok(RepOut { errors, aux })
    }
}

// ---------------------------------------------------------- interpolators

struct InterpSetting {
    n: usize,
    source: InterpSource,
    /// Covariance handed to the estimators.
    sigma_used: DMatrix<f64>,
    factor: SigmaFactor,
    eval: SigmaFactor,
    terms: InterpRiskTerms,
}

enum InterpSource {
    Pool(UnlabeledPool),
    Gaussian(GaussianDesign),
}

impl InterpSource {
    fn as_source(&self) -> &dyn DesignSource {
        match self {
            InterpSource::Pool(p) => p,
            InterpSource::Gaussian(g) => g,
        }
    }
}

impl InterpSetting {
    fn build(cfg: &ExperimentConfig, n: usize) -> Result<Self> {
        let p = cfg.p_for(n)?;
        let sigma = generative_sigma(cfg, n, p)?;
        let design = GaussianDesign::new(&sigma)?;
        let (source, sigma_used) = if cfg.known_sigma {
            (InterpSource::Gaussian(design), sigma.clone())
        } else {
            let raw = draw_pool(&design, cfg.pool_size, derive_seed(cfg.seed, &[POOL, p as u64]))?;
            let (pool, moments) = build_moments(&raw, n)?;
            let s = moments.exx().clone();
            (InterpSource::Pool(pool), s)
        };
        let factor = SigmaFactor::new(&sigma_used)?;
        let eval = match cfg.evaluation {
            Evaluation::Pool => factor.clone(),
            Evaluation::Population => SigmaFactor::new(&sigma)?,
        };
        let spec = ResampleSpec::new(n, cfg.oracle_blocks, derive_seed(cfg.seed, &[TERMS, n as u64]));
        let terms = interp_risk_terms(&sigma_used, n, source.as_source(), spec)?;
        Ok(Self { n, source, sigma_used, factor, eval, terms })
    }
}

struct InterpScenario<'a> {
    setting: &'a InterpSetting,
    estimators: Vec<Estimator>,
    columns: Vec<(String, f64)>,
    sigma2: f64,
    tau2: f64,
    alpha_oracle: f64,
    info: BTreeMap<String, f64>,
}

impl<'a> InterpScenario<'a> {
    fn new(cfg: &ExperimentConfig, estimators: &[Estimator], setting: &'a InterpSetting, sigma2: f64, gv: f64) -> Result<Self> {
        let tau2 = cfg.tau2().ok_or_else(|| SimError::config("interpolator presets need a random-coefficient model"))?;
        let t = &setting.terms;
        let (alpha_oracle, r_oracle) = interp_alpha(sigma2, tau2, t)?;
        let r_l = t.r_min_norm(sigma2, tau2);
        let mut info = BTreeMap::from([
            ("v_l".to_string(), t.v_l),
            ("v_u".to_string(), t.v_u),
            ("b_l".to_string(), t.b_l),
            ("b_u".to_string(), t.b_u),
            ("se_v_l".to_string(), t.se_v_l),
            ("se_v_u".to_string(), t.se_v_u),
            ("alpha_star".to_string(), alpha_oracle),
            ("r_alpha_star".to_string(), r_oracle),
            ("n".to_string(), setting.n as f64),
            ("p".to_string(), setting.sigma_used.nrows() as f64),
            ("sigma2".to_string(), sigma2),
            ("tau2".to_string(), tau2),
        ]);
        if r_l > 0.0 {
            info.insert("eta".into(), r_oracle / r_l);
        }
        Ok(Self {
            setting,
            estimators: estimators.to_vec(),
            columns: expand_columns(estimators, &cfg.alpha, gv),
            sigma2,
            tau2,
            alpha_oracle,
            info,
        })
    }
}

/// Mixing ratio and attained risk; no noise and no signal gives `α = 0`.
fn interp_alpha(sigma2: f64, tau2: f64, terms: &InterpRiskTerms) -> mssl_core::Result<(f64, f64)> {
    if sigma2 <= 0.0 {
        return Ok((0.0, terms.r_min_norm(0.0, tau2)));
    }
    alpha_star_interp(sigma2, tau2, terms)
}

/// `sigma_norm_*` are `wᵀΣw` under the covariance handed to the estimators.
const INTERP_AUX: &[&str] = &[
    "sigma2_hat",
    "tau2_hat",
    "sigma2_tau",
    "alpha_hat",
    "alpha_tau",
    "iterations",
    "sigma_norm_min_norm",
    "sigma_norm_min_variance",
];

impl Scenario for InterpScenario<'_> {
    fn columns(&self) -> Vec<(String, f64)> {
        self.columns.clone()
    }

    fn aux_names(&self) -> &'static [&'static str] {
        INTERP_AUX
    }

    fn info(&self) -> BTreeMap<String, f64> {
        self.info.clone()
    }

    fn replicate(&self, seed: u64) -> mssl_core::Result<RepOut> {
        use Estimator::*;
        let s = self.setting;
        let p = s.sigma_used.nrows();
        let mut rng = stream(seed, &[]);
        let w = BetaMode::RandomIid { tau2: self.tau2 }.draw(p, &mut rng).map_err(to_core)?;
        let data = draw_response(s.source.as_source(), s.n, &w, &Link::identity(), self.sigma2, &mut rng).map_err(to_core)?;
        let has = |e: Estimator| self.estimators.contains(&e);
        let w_hat = fit_min_norm(&data)?;
        let w_tilde = fit_min_variance_with(&data, &s.factor)?;
        let est = if has(MixedHat) { Some(iterate_sigma_tau(&data, &s.sigma_used)?) } else { None };
        let alpha_hat = match est {
            Some(e) => Some(interp_alpha(e.sigma2_hat, e.tau2_hat, &s.terms)?.0),
            None => None,
        };
        let sigma2_tau = if has(MixedTau) { Some(sigma2_known_tau(&data, self.tau2)?) } else { None };
        let alpha_tau = match sigma2_tau {
            Some(v) => Some(interp_alpha(v.max(0.0), self.tau2, &s.terms)?.0),
            None => None,
        };
        let mix = |a: f64| &w_hat * (1.0 - a) + &w_tilde * a;
        let err = |b: &DVector<f64>| s.eval.quad(&(b - &w));
        let mut errors = Vec::with_capacity(self.columns.len());
        for e in &self.estimators {
            let b = match *e {
                MinNorm => w_hat.clone(),
                MinVariance => w_tilde.clone(),
                MixedHat => mix(alpha_hat.expect("computed above")),
                MixedTau => mix(alpha_tau.expect("computed above")),
                MixedOracle => mix(self.alpha_oracle),
                Mixed(a) => mix(a),
                _ => unreachable!("validated estimator set"),
            };
            errors.push(err(&b));
        }
        let aux = vec![
            est.map(|e| e.sigma2_hat).unwrap_or(f64::NAN),
            est.map(|e| e.tau2_hat).unwrap_or(f64::NAN),
            nan_if_none(sigma2_tau),
            nan_if_none(alpha_hat),
            nan_if_none(alpha_tau),
            est.map(|e| e.iterations as f64).unwrap_or(f64::NAN),
            s.factor.quad(&w_hat),
            s.factor.quad(&w_tilde),
        ];
        Ok(RepOut { errors, aux })
    }
}
