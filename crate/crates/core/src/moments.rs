//! Second moments of the covariate distribution and resampling of the pool.
//!
//! The pool is the only source of "population" quantities. Moments come from
//! the full pool; expectations over a labeled design `X` of `n` rows (such as
//! `E[(XᵀX)⁻¹]`) are realized by drawing `n`-row blocks from it.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::UnlabeledPool;
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::rng;

/// Moment estimates from a centered pool, scaled for designs of `n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    n: usize,
    mean: DVector<f64>,
    exx: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl PopulationMoments {
    /// Moments from a known `E[xxᵀ]` (zero-mean convention).
    pub fn from_exx(exx: DMatrix<f64>, n: usize) -> Result<Self> {
        if !exx.is_square() {
            return Err(Error::Shape(format!("E[xxᵀ] is {}x{}", exx.nrows(), exx.ncols())));
        }
        if n == 0 {
            return Err(Error::precondition("design size n must be positive"));
        }
        let exx = symmetrize(&exx);
        let h = &exx * (n as f64);
        let mean = DVector::zeros(exx.nrows());
        Ok(Self { n, mean, exx, h })
    }

    /// Same moments rescaled for designs of `n` rows.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        let mut out = Self::from_exx(self.exx.clone(), n)?;
        out.mean = self.mean.clone();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.exx.nrows()
    }

    /// Pool column means before centering.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Estimate of `E[xxᵀ]`.
    pub fn exx(&self) -> &DMatrix<f64> {
        &self.exx
    }

    /// `H = E[XᵀX] = n E[xxᵀ]`.
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Covariance estimate; equal to `E[xxᵀ]` under the zero-mean convention.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.exx
    }
}

/// Center the pool (unless already centered) and estimate its moments for
/// designs of `n` rows. Returns the centered pool view alongside.
pub fn build_moments(pool: &UnlabeledPool, n: usize) -> Result<(UnlabeledPool, PopulationMoments)> {
    if pool.m() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: pool.m() });
    }
    let (centered, mean) = pool.centered();
    let m = centered.m() as f64;
    let exx = centered.z().tr_mul(centered.z()) / m;
    let mut moments = PopulationMoments::from_exx(exx, n)?;
    moments.mean = mean;
    Ok((centered, moments))
}

/// Block resampling parameters: `replications` blocks of `block_size` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub block_size: usize,
    pub replications: usize,
    pub seed: u64,
}

/// Default number of resampled blocks for risk-term estimates.
pub const DEFAULT_BLOCKS: usize = 200;

/// Fraction of singular blocks tolerated before an estimate is abandoned.
pub const BLOCK_FAILURE_BUDGET: f64 = 0.10;

impl ResampleSpec {
    pub fn new(block_size: usize, replications: usize, seed: u64) -> Self {
        Self { block_size, replications, seed }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::precondition("block size must be positive"));
        }
        if self.block_size > m {
            return Err(Error::precondition(format!(
                "block size {} exceeds pool size {m}",
                self.block_size
            )));
        }
        if self.replications == 0 {
            return Err(Error::precondition("at least one replication is required"));
        }
        Ok(())
    }
}

/// A source of random `n x p` designs with iid rows from the covariate law.
pub trait DesignSource: Sync {
    fn p(&self) -> usize;

    /// Draw `n` rows; deterministic in `(seed, index)`.
    fn draw(&self, n: usize, seed: u64, index: u64) -> Result<DMatrix<f64>>;
}

impl DesignSource for UnlabeledPool {
    fn p(&self) -> usize {
        UnlabeledPool::p(self)
    }

    /// Rows drawn uniformly without replacement.
    fn draw(&self, n: usize, seed: u64, index: u64) -> Result<DMatrix<f64>> {
        if n > self.m() {
            return Err(Error::precondition(format!("block of {n} rows from a pool of {}", self.m())));
        }
        let mut r = rng::stream(seed, &[0xB10C, index]);
        let idx = sample(&mut r, self.m(), n).into_vec();
        Ok(self.rows(&idx))
    }
}

/// Zero-mean Gaussian rows with covariance `Σ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct GaussianDesign {
    factor: GaussianFactor,
}

#[derive(Debug, Clone)]
enum GaussianFactor {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl GaussianDesign {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::Shape("covariance must be square".into()));
        }
        let p = sigma.nrows();
        let diagonal = (0..p).all(|i| (0..p).all(|j| i == j || sigma[(i, j)] == 0.0));
        if diagonal {
            if sigma.diagonal().iter().any(|&d| d < 0.0) {
                return Err(Error::Singular("covariance (negative variance)".into()));
            }
            return Ok(Self { factor: GaussianFactor::Diagonal(sigma.diagonal().map(f64::sqrt)) });
        }
        let l = symmetrize(sigma)
            .cholesky()
            .ok_or_else(|| Error::Singular("covariance".into()))?
            .l();
        Ok(Self { factor: GaussianFactor::Dense(l) })
    }

    /// Transform iid standard normal rows into rows with covariance `Σ`.
    pub fn transform(&self, mut z: DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            GaussianFactor::Diagonal(sd) => {
                for (j, mut col) in z.column_iter_mut().enumerate() {
                    col *= sd[j];
                }
                z
            }
            GaussianFactor::Dense(l) => z * l.transpose(),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let z = rng::standard_normal_matrix(n, DesignSource::p(self), rng);
        self.transform(z)
    }
}

impl DesignSource for GaussianDesign {
    fn p(&self) -> usize {
        match &self.factor {
            GaussianFactor::Diagonal(d) => d.len(),
            GaussianFactor::Dense(l) => l.nrows(),
        }
    }

    fn draw(&self, n: usize, seed: u64, index: u64) -> Result<DMatrix<f64>> {
        let mut r = rng::stream(seed, &[0x6A55, index]);
        Ok(self.sample(n, &mut r))
    }
}

/// Deterministic sequence of `n x p` blocks drawn from a pool.
#[derive(Debug, Clone, Copy)]
pub struct BlockSampler<'a> {
    pool: &'a UnlabeledPool,
    spec: ResampleSpec,
}

impl<'a> BlockSampler<'a> {
    pub fn new(pool: &'a UnlabeledPool, spec: ResampleSpec) -> Result<Self> {
        spec.validate(pool.m())?;
        Ok(Self { pool, spec })
    }

    pub fn spec(&self) -> ResampleSpec {
        self.spec
    }

    /// Block `index`, independent of any other block that was drawn.
    pub fn block(&self, index: usize) -> DMatrix<f64> {
        self.pool
            .draw(self.spec.block_size, self.spec.seed, index as u64)
            .expect("block size validated at construction")
    }

    pub fn iter(&self) -> impl Iterator<Item = DMatrix<f64>> + '_ {
        (0..self.spec.replications).map(move |i| self.block(i))
    }
}

/// Iterator over `spec.replications` blocks of `spec.block_size` pool rows.
pub fn resample_blocks(
    pool: &UnlabeledPool,
    spec: ResampleSpec,
) -> Result<impl Iterator<Item = DMatrix<f64>> + '_> {
    let sampler = BlockSampler::new(pool, spec)?;
    Ok((0..spec.replications).map(move |i| sampler.block(i)))
}

/// Per-draw results of a Monte Carlo estimate, with singular draws removed.
#[derive(Debug, Clone)]
pub struct DrawResults<T> {
    pub values: Vec<T>,
    pub skipped: usize,
}

/// Evaluate `f` on `spec.replications` designs of `spec.block_size` rows from
/// `source`, in parallel, keeping draw order. `f` returns `None` for a
/// singular draw; more than 10% of those fails the whole estimate.
pub fn map_draws<S, T, F>(source: &S, spec: ResampleSpec, f: F) -> Result<DrawResults<T>>
where
    S: DesignSource + ?Sized,
    T: Send,
    F: Fn(&DMatrix<f64>) -> Option<T> + Sync + Send,
{
    if spec.replications == 0 {
        return Err(Error::precondition("at least one replication is required"));
    }
    let results: Vec<Result<Option<T>>> = (0..spec.replications)
        .into_par_iter()
        .map(|i| source.draw(spec.block_size, spec.seed, i as u64).map(|x| f(&x)))
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(v) => values.push(v),
            None => skipped += 1,
        }
    }
    let total = spec.replications;
    if skipped as f64 > BLOCK_FAILURE_BUDGET * total as f64 || values.is_empty() {
        return Err(Error::ResampleBudget { failed: skipped, total });
    }
    Ok(DrawResults { values, skipped })
}

/// Per-batch accumulators from [`fold_draws`].
#[derive(Debug, Clone)]
pub struct BatchFold<A> {
    /// One accumulator per batch together with the number of draws it absorbed.
    pub batches: Vec<(A, usize)>,
    pub skipped: usize,
}

/// Fold `spec.replications` draws into `batches` contiguous batches, one
/// batch per parallel task. `fold` returns `false` for a singular draw, which
/// is skipped; the 10% failure budget applies as in [`map_draws`].
///
/// Batch accumulators feed batch-means standard errors for quantities too
/// large to keep per draw (for instance `p x p` matrices).
pub fn fold_draws<S, A, I, F>(source: &S, spec: ResampleSpec, batches: usize, init: I, fold: F) -> Result<BatchFold<A>>
where
    S: DesignSource + ?Sized,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &DMatrix<f64>) -> bool + Sync + Send,
{
    let total = spec.replications;
    if total == 0 {
        return Err(Error::precondition("at least one replication is required"));
    }
    let nb = batches.clamp(1, total);
    let out: Vec<Result<(A, usize, usize)>> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let (lo, hi) = (b * total / nb, (b + 1) * total / nb);
            let mut acc = init();
            let (mut used, mut skipped) = (0, 0);
            for i in lo..hi {
                let x = source.draw(spec.block_size, spec.seed, i as u64)?;
                if fold(&mut acc, &x) {
                    used += 1;
                } else {
                    skipped += 1;
                }
            }
            Ok((acc, used, skipped))
        })
        .collect();
    let mut result = BatchFold { batches: Vec::with_capacity(nb), skipped: 0 };
    for r in out {
        let (acc, used, skipped) = r?;
        result.skipped += skipped;
        result.batches.push((acc, used));
    }
    if result.skipped as f64 > BLOCK_FAILURE_BUDGET * total as f64 || result.skipped == total {
        return Err(Error::ResampleBudget { failed: result.skipped, total });
    }
    Ok(result)
}

/// Smallest eigenvalue of `Σ` relative to its trace; `>= -1e-10` means PSD.
pub fn psd_margin(sigma: &DMatrix<f64>) -> f64 {
    let tr = sigma.trace().abs().max(f64::MIN_POSITIVE);
    linalg::min_eigenvalue(sigma) / tr
}
