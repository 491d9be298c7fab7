//! Monotone link functions `g` with derivative `g'` and antiderivative `G`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Identity,
    Elu,
    Custom,
}

/// A link triple `(g, g', G)` with `G' = g`.
#[derive(Clone)]
pub struct Link {
    kind: LinkKind,
    custom: Option<(ScalarFn, ScalarFn, ScalarFn)>,
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Link").field("kind", &self.kind).finish()
    }
}

impl Link {
    pub fn identity() -> Self {
        Self { kind: LinkKind::Identity, custom: None }
    }

    /// `g(z) = min(e^z - 1, max(0, z))`, with `G(0) = 1` fixed by continuity.
    pub fn elu() -> Self {
        Self { kind: LinkKind::Elu, custom: None }
    }

    pub fn custom(
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gprime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        big_g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { kind: LinkKind::Custom, custom: Some((Arc::new(g), Arc::new(gprime), Arc::new(big_g))) }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::identity()),
            "elu" => Ok(Self::elu()),
            other => Err(Error::domain(format!("unknown link '{other}' (expected identity or elu)"))),
        }
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LinkKind::Identity => "identity",
            LinkKind::Elu => "elu",
            LinkKind::Custom => "custom",
        }
    }

    #[inline]
    pub fn g(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => z,
            LinkKind::Elu => {
                if z < 0.0 {
                    z.exp_m1()
                } else {
                    z
                }
            }
            LinkKind::Custom => (self.custom.as_ref().unwrap().0)(z),
        }
    }

    #[inline]
    pub fn gprime(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 1.0,
            LinkKind::Elu => {
                if z < 0.0 {
                    z.exp()
                } else {
                    1.0
                }
            }
            LinkKind::Custom => (self.custom.as_ref().unwrap().1)(z),
        }
    }

    /// Antiderivative `G` of `g`.
    #[inline]
    pub fn big_g(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 0.5 * z * z,
            LinkKind::Elu => {
                if z < 0.0 {
                    z.exp() - z
                } else {
                    0.5 * z * z + 1.0
                }
            }
            LinkKind::Custom => (self.custom.as_ref().unwrap().2)(z),
        }
    }

    /// `(g(z), g'(z), G(z))`.
    pub fn eval(&self, z: f64) -> Result<(f64, f64, f64)> {
        if !z.is_finite() {
            return Err(Error::domain(format!("link evaluated at non-finite argument {z}")));
        }
        Ok((self.g(z), self.gprime(z), self.big_g(z)))
    }
}

/// Outcome of the finite-difference consistency check of a link.
#[derive(Debug, Clone, Serialize)]
pub struct LinkReport {
    pub link: LinkKind,
    /// Largest relative error of the central difference of `G` against `g`.
    pub max_err_antiderivative: f64,
    /// Largest relative error of the central difference of `g` against `g'`.
    pub max_err_derivative: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const LINK_TOLERANCE: f64 = 1e-6;
pub const LINK_STEP: f64 = 1e-5;

/// Check `G' = g` and `g' ≈ gprime` by central differences at `probes`, and
/// that `g` increases between consecutive probes (after sorting).
pub fn validate_link(link: &Link, probes: &[f64]) -> Result<LinkReport> {
    if probes.len() < 3 {
        return Err(Error::precondition("link validation needs at least 3 probe points"));
    }
    if probes.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("non-finite probe point"));
    }
    let mut pts = probes.to_vec();
    pts.sort_by(|a, b| a.total_cmp(b));
    for w in pts.windows(2) {
        if w[1] > w[0] && link.g(w[1]) < link.g(w[0]) {
            return Err(Error::LinkValidation(format!(
                "g decreases on [{}, {}]: g({}) = {} > g({}) = {}",
                w[0],
                w[1],
                w[0],
                link.g(w[0]),
                w[1],
                link.g(w[1])
            )));
        }
    }
    let h = LINK_STEP;
    let rel = |approx: f64, exact: f64| (approx - exact).abs() / exact.abs().max(1.0);
    let mut err_g = 0.0_f64;
    let mut err_gp = 0.0_f64;
    for &z in &pts {
        let fd_g = (link.big_g(z + h) - link.big_g(z - h)) / (2.0 * h);
        let fd_gp = (link.g(z + h) - link.g(z - h)) / (2.0 * h);
        err_g = err_g.max(rel(fd_g, link.g(z)));
        err_gp = err_gp.max(rel(fd_gp, link.gprime(z)));
    }
    Ok(LinkReport {
        link: link.kind(),
        max_err_antiderivative: err_g,
        max_err_derivative: err_gp,
        tolerance: LINK_TOLERANCE,
        passed: err_g < LINK_TOLERANCE && err_gp < LINK_TOLERANCE,
    })
}
