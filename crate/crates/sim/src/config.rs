//! Experiment configuration and the built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::dataset::BetaMode;
use crate::error::{Result, SimError};
use crate::estimator::{Estimator, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    OlsConstantBeta,
    OlsRandomBeta,
    GlmElu,
    GlmAlphaSweep,
    InterpFixed,
    InterpGrowth,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::OlsConstantBeta,
        Preset::OlsRandomBeta,
        Preset::GlmElu,
        Preset::GlmAlphaSweep,
        Preset::InterpFixed,
        Preset::InterpGrowth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OlsConstantBeta => "ols_constant_beta",
            Preset::OlsRandomBeta => "ols_random_beta",
            Preset::GlmElu => "glm_elu",
            Preset::GlmAlphaSweep => "glm_alpha_sweep",
            Preset::InterpFixed => "interp_fixed",
            Preset::InterpGrowth => "interp_growth",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::OlsConstantBeta => "OLS, constant beta = 1.5, block covariance, sweep over noise level",
            Preset::OlsRandomBeta => "OLS, random beta, tr(Sigma) = 25, p = n/2, sweep over n",
            Preset::GlmElu => "ELU link, beta = 2, n = 50, p = 10, sweep over noise level",
            Preset::GlmAlphaSweep => "ELU link at noise level 25, fixed-ratio mixtures over an alpha grid",
            Preset::InterpFixed => "interpolators, spiked covariance, n = 50, p = 100, sweep over noise level",
            Preset::InterpGrowth => "interpolators, spiked covariance, p = 2n, tr(Sigma) = 25, sweep over n",
        }
    }

    pub fn model(self) -> Model {
        match self {
            Preset::OlsConstantBeta | Preset::OlsRandomBeta => Model::Ols,
            Preset::GlmElu | Preset::GlmAlphaSweep => Model::Glm,
            Preset::InterpFixed | Preset::InterpGrowth => Model::Interp,
        }
    }

    /// The swept quantity: `sigma2`, `n` or `alpha`.
    pub fn grid_name(self) -> &'static str {
        match self {
            Preset::OlsConstantBeta | Preset::GlmElu | Preset::InterpFixed => "sigma2",
            Preset::OlsRandomBeta | Preset::InterpGrowth => "n",
            Preset::GlmAlphaSweep => "alpha",
        }
    }

    pub fn available() -> String {
        Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
    }

    /// Desk-scale defaults.
    pub fn default_config(self) -> ExperimentConfig {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let base = ExperimentConfig {
            preset: self,
            seed: 20240101,
            replications: 500,
            n: vec![100],
            p: Some(50),
            p_ratio: None,
            sigma2: vec![25.0],
            alpha: vec![],
            beta: BetaMode::Constant { value: 1.5 },
            covariance: CovarianceShape::BlockEquicorrelated { blocks: 5, rho: 0.9 },
            sigma_trace: None,
            link: "identity".into(),
            pool_size: 50_000,
            fit_pool_size: 5_000,
            known_sigma: false,
            oracle_blocks: 1000,
            fit_blocks: 100,
            grid_size: mssl_core::ols::DEFAULT_GRID_SIZE,
            grid_spacing: GridSpacing::Geometric,
            estimators: vec![],
            evaluation: Evaluation::Pool,
            output: None,
            threads: None,
        };
        match self {
            Preset::OlsConstantBeta => ExperimentConfig {
                sigma2: vec![1.0, 9.0, 25.0, 49.0],
                estimators: names(&[
                    "supervised",
                    "semisupervised",
                    "adaptive",
                    "linear_mixed_hat",
                    "linear_mixed_oracle",
                    "loss_mixed_hat",
                    "loss_mixed_tilde",
                    "loss_mixed_oracle",
                ]),
                ..base
            },
            Preset::OlsRandomBeta => ExperimentConfig {
                n: vec![100, 200, 500],
                p: None,
                p_ratio: Some(0.5),
                beta: BetaMode::RandomIid { tau2: 1.0 },
                sigma_trace: Some(25.0),
                estimators: names(&["supervised", "semisupervised", "linear_mixed_hat", "linear_mixed_tau", "linear_mixed_oracle"]),
                ..base
            },
            Preset::GlmElu => ExperimentConfig {
                n: vec![50],
                p: Some(10),
                sigma2: vec![1.0, 4.0, 9.0, 16.0, 25.0],
                beta: BetaMode::Constant { value: 2.0 },
                link: "elu".into(),
                oracle_blocks: 2000,
                fit_blocks: 200,
                estimators: names(&[
                    "supervised",
                    "semisupervised",
                    "linear_mixed_hat",
                    "linear_mixed_oracle",
                    "loss_mixed_hat",
                    "loss_mixed_tilde",
                    "loss_mixed_oracle",
                ]),
                ..base
            },
            Preset::GlmAlphaSweep => ExperimentConfig {
                n: vec![50],
                p: Some(10),
                sigma2: vec![25.0],
                alpha: mssl_core::stats::unit_grid(21),
                beta: BetaMode::Constant { value: 2.0 },
                link: "elu".into(),
                oracle_blocks: 2000,
                estimators: names(&["linear_mixed", "loss_mixed"]),
                ..base
            },
            Preset::InterpFixed => ExperimentConfig {
                n: vec![50],
                p: Some(100),
                sigma2: vec![1.0, 4.0, 9.0, 16.0, 25.0],
                beta: BetaMode::RandomIid { tau2: 1.0 },
                covariance: CovarianceShape::SpikedDiagonal { spike_fraction: 0.8, major: 1.0, minor: None },
                oracle_blocks: 2000,
                estimators: names(&["min_norm", "min_variance", "mixed_hat", "mixed_tau", "mixed_oracle"]),
                ..base
            },
            Preset::InterpGrowth => ExperimentConfig {
                n: vec![100, 200, 300],
                p: None,
                p_ratio: Some(2.0),
                sigma2: vec![25.0],
                beta: BetaMode::RandomIid { tau2: 1.0 },
                covariance: CovarianceShape::SpikedDiagonal { spike_fraction: 0.8, major: 1.0, minor: None },
                sigma_trace: Some(25.0),
                known_sigma: true,
                oracle_blocks: 400,
                estimators: names(&["min_norm", "min_variance", "mixed_hat", "mixed_tau", "mixed_oracle"]),
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| SimError::UnknownPreset { name: s.to_string(), available: Preset::available() })
    }
}

/// Covariance recipe without its dimension, which follows the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceShape {
    BlockEquicorrelated {
        blocks: usize,
        rho: f64,
    },
    SpikedDiagonal {
        spike_fraction: f64,
        #[serde(default = "one")]
        major: f64,
        /// Minor entries; `1/n` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        minor: Option<f64>,
    },
    Identity,
}

fn one() -> f64 {
    1.0
}

impl CovarianceShape {
    pub fn at(&self, p: usize, n: usize) -> CovarianceSpec {
        match *self {
            CovarianceShape::BlockEquicorrelated { blocks, rho } => CovarianceSpec::BlockEquicorrelated { p, blocks, rho },
            CovarianceShape::SpikedDiagonal { spike_fraction, major, minor } => CovarianceSpec::SpikedDiagonal {
                p,
                spike_fraction,
                major,
                minor: minor.unwrap_or(1.0 / n as f64),
            },
            CovarianceShape::Identity => CovarianceSpec::Identity { p },
        }
    }
}

/// Layout of the ratio search grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Uniform,
    /// `0` followed by geometrically spaced points from `1e-3` to `1`, which
    /// resolves the small ratios that strong signals call for.
    Geometric,
}

pub const GEOMETRIC_GRID_START: f64 = 1e-3;

/// Search grid with `k >= 3` points.
pub fn search_grid(k: usize, spacing: GridSpacing) -> Vec<f64> {
    match spacing {
        GridSpacing::Uniform => mssl_core::stats::unit_grid(k),
        GridSpacing::Geometric => {
            let steps = (k - 2) as f64;
            let ratio = (1.0 / GEOMETRIC_GRID_START).powf(1.0 / steps);
            let mut g = vec![0.0];
            g.extend((0..k - 1).map(|i| if i == k - 2 { 1.0 } else { GEOMETRIC_GRID_START * ratio.powi(i as i32) }));
            g
        }
    }
}

/// Matrix in the reducible-error quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Second moment of the fixed pool (GLM: loss averaged over the pool).
    Pool,
    /// The generative covariance (GLM: loss over an independent pool).
    Population,
}

/// A complete experiment description. Files name a `preset` and override any
/// subset of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Replications `K`.
    pub replications: usize,
    pub n: Vec<usize>,
    /// Fixed dimension, or `p = round(p_ratio * n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ratio: Option<f64>,
    pub sigma2: Vec<f64>,
    /// Fixed ratios for the sweep preset.
    #[serde(default)]
    pub alpha: Vec<f64>,
    pub beta: BetaMode,
    pub covariance: CovarianceShape,
    /// Rescale the covariance to this trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_trace: Option<f64>,
    pub link: String,
    /// Size of the fixed pool used for moments, oracles and evaluation.
    pub pool_size: usize,
    /// Size of the per-replication pool (GLM presets).
    pub fit_pool_size: usize,
    /// Interpolators: use the generative covariance instead of the pool estimate.
    pub known_sigma: bool,
    /// Resampled designs behind oracle risk terms.
    pub oracle_blocks: usize,
    /// Resampled designs behind per-replication plug-in terms (GLM presets).
    pub fit_blocks: usize,
    /// Points of the ratio grid searched by `loss_mixed_tilde`/`_oracle`.
    pub grid_size: usize,
    pub grid_spacing: GridSpacing,
    pub estimators: Vec<String>,
    pub evaluation: Evaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        preset.default_config()
    }

    /// Parse TOML text. Keys absent from the text keep the preset defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse()?;
        let preset: Preset = match user.get("preset") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(SimError::config("`preset` must be a string")),
            None => return Err(SimError::config("missing `preset`")),
        };
        let defaults = toml::Table::try_from(preset.default_config())
            .map_err(|e| SimError::config(format!("cannot serialize defaults: {e}")))?;
        let mut merged = defaults;
        for (k, v) in user {
            merged.insert(k, v);
        }
        let cfg: ExperimentConfig = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SimError::config(e.to_string()))
    }

    pub fn model(&self) -> Model {
        self.preset.model()
    }

    /// Dimension used at sample size `n`.
    pub fn p_for(&self, n: usize) -> Result<usize> {
        match (self.p, self.p_ratio) {
            (Some(p), None) => Ok(p),
            (None, Some(r)) => {
                let p = (r * n as f64).round();
                if !(p >= 1.0) {
                    return Err(SimError::config(format!("p_ratio {r} gives no columns at n = {n}")));
                }
                Ok(p as usize)
            }
            _ => Err(SimError::config("set exactly one of `p` and `p_ratio`")),
        }
    }

    /// Known signal level of a random-coefficient model.
    pub fn tau2(&self) -> Option<f64> {
        match self.beta {
            BetaMode::RandomIid { tau2 } => Some(tau2),
            BetaMode::Constant { .. } => None,
        }
    }

    pub fn parsed_estimators(&self) -> Result<Vec<Estimator>> {
        self.estimators.iter().map(|s| s.parse()).collect()
    }

    pub fn search_grid(&self) -> Vec<f64> {
        search_grid(self.grid_size, self.grid_spacing)
    }

    /// Values of the swept quantity.
    pub fn grid(&self) -> Vec<f64> {
        match self.preset.grid_name() {
            "n" => self.n.iter().map(|&n| n as f64).collect(),
            "alpha" => self.alpha.clone(),
            _ => self.sigma2.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.replications < 2 {
            return bad(format!("replications = {} must be at least 2", self.replications));
        }
        if self.n.is_empty() || self.sigma2.is_empty() {
            return bad("grids must be nonempty".into());
        }
        if self.n.iter().any(|&n| n < 2) {
            return bad("every n must be at least 2".into());
        }
        if self.sigma2.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigma2 values must be finite and nonnegative".into());
        }
        let grid_name = self.preset.grid_name();
        if grid_name != "n" && self.n.len() != 1 {
            return bad(format!("preset {} sweeps {grid_name}; give a single n", self.preset));
        }
        if grid_name != "sigma2" && self.sigma2.len() != 1 {
            return bad(format!("preset {} sweeps {grid_name}; give a single sigma2", self.preset));
        }
        if grid_name == "alpha" {
            if self.alpha.is_empty() {
                return bad("the alpha grid must be nonempty".into());
            }
            if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return bad("alpha values must lie in [0, 1]".into());
            }
        }
        if self.pool_size < 2 || self.fit_pool_size < 2 {
            return bad("pool sizes must be at least 2".into());
        }
        if self.oracle_blocks == 0 || self.fit_blocks == 0 {
            return bad("block counts must be positive".into());
        }
        if self.grid_size < 5 {
            return bad("grid_size must be at least 5".into());
        }
        if let Some(t) = self.sigma_trace {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("sigma_trace = {t} must be positive"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        mssl_core::Link::by_name(&self.link).map_err(|e| SimError::Config(e.to_string()))?;
        let model = self.model();
        if model != Model::Glm && self.link != "identity" {
            return bad(format!("preset {} requires the identity link", self.preset));
        }
        for &n in &self.n {
            let p = self.p_for(n)?;
            match model {
                Model::Ols | Model::Glm if p >= n => {
                    return bad(format!("preset {} needs n > p (n = {n}, p = {p})", self.preset));
                }
                Model::Interp if p <= n + 1 => {
                    return bad(format!("preset {} needs p > n + 1 (n = {n}, p = {p})", self.preset));
                }
                _ => {}
            }
            let need = match model {
                Model::Glm => self.pool_size.min(self.fit_pool_size),
                _ => self.pool_size,
            };
            if need < n {
                return bad(format!("pool of {need} rows cannot supply designs of {n} rows"));
            }
        }
        let ests = self.parsed_estimators()?;
        if ests.is_empty() {
            return bad("the estimator set is empty".into());
        }
        for e in &ests {
            if !e.supports(model) {
                return bad(format!("estimator {e} is not available for preset {}", self.preset));
            }
            if e.is_sweep() != (grid_name == "alpha") {
                return bad(format!("estimator {e} does not fit the {grid_name} grid of preset {}", self.preset));
            }
            let needs_tau = matches!(e, Estimator::LinearMixedTau | Estimator::MixedTau);
            if needs_tau && self.tau2().is_none() {
                return bad(format!("estimator {e} needs a random-coefficient model"));
            }
        }
        if model == Model::Interp && self.tau2().is_none() {
            return bad("interpolator presets need beta.mode = \"random_iid\"".into());
        }
        let mut seen = std::collections::HashSet::new();
        for e in &ests {
            if !seen.insert(e.to_string()) {
                return bad(format!("estimator {e} listed twice"));
            }
        }
        Ok(())
    }
}
