//! Posterior statistics per solution-parameter pair.
//!
//! Both supported models use noninformative priors, under which the
//! posterior quantities reduce to sample statistics:
//!
//! - known variance (normal–normal): `μ_n = ȳ`, `σ²_n = λ²/N`;
//! - unknown variance (normal–gamma with `(τ, γ, ω)_0 = (0, 0, 0)`):
//!   `μ_n = ȳ`, `γ_n = N/2`, `ω_n = Σ(y - ȳ)²/2`, so `S² = ω_n/γ_n` is the
//!   biased sample variance.
//!
//! With a batch size `c > 1`, every recorded observation is the average of
//! `c` raw outputs and carries variance `λ²/c`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp for every variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("pair ({i}, {b}) has no observations")]
    UninitializedPair { i: usize, b: usize },
    #[error("pair ({i}, {b}) needs at least 2 observations for a variance estimate, has {count}")]
    InsufficientData { i: usize, b: usize, count: u64 },
    #[error("expected {expected} outputs per batch, got {actual}")]
    BatchSize { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    KnownVariance,
    NormalGamma,
}

/// Welford accumulator for one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub count: u64,
    pub mean: f64,
    /// Running `Σ (y - ȳ)²`.
    pub m2: f64,
}

impl PairStats {
    fn push(&mut self, y: f64) {
        self.count += 1;
        let delta = y - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (y - self.mean);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningState {
    mode: VarianceMode,
    k: usize,
    n_params: usize,
    batch_size: usize,
    /// Row-major `k × B`.
    stats: Vec<PairStats>,
    /// Known per-observation variances `λ²/c` (known-variance mode only).
    known_var: Option<Vec<f64>>,
}

impl LearningState {
    /// Known-variance learner. `lambdas[i][b]` is the standard deviation of
    /// one raw output.
    pub fn known_variance(lambdas: &[Vec<f64>], batch_size: usize) -> Self {
        assert!(batch_size >= 1, "batch size must be positive");
        let k = lambdas.len();
        let n_params = lambdas.first().map_or(0, Vec::len);
        let known_var = lambdas
            .iter()
            .flat_map(|row| row.iter().map(|l| l * l / batch_size as f64))
            .collect();
        LearningState {
            mode: VarianceMode::KnownVariance,
            k,
            n_params,
            batch_size,
            stats: vec![PairStats::default(); k * n_params],
            known_var: Some(known_var),
        }
    }

    pub fn normal_gamma(k: usize, n_params: usize, batch_size: usize) -> Self {
        assert!(batch_size >= 1, "batch size must be positive");
        LearningState {
            mode: VarianceMode::NormalGamma,
            k,
            n_params,
            batch_size,
            stats: vec![PairStats::default(); k * n_params],
            known_var: None,
        }
    }

    pub fn mode(&self) -> VarianceMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    #[inline]
    fn idx(&self, i: usize, b: usize) -> usize {
        debug_assert!(i < self.k && b < self.n_params);
        i * self.n_params + b
    }

    pub fn stats(&self, i: usize, b: usize) -> PairStats {
        self.stats[self.idx(i, b)]
    }

    pub fn count(&self, i: usize, b: usize) -> u64 {
        self.stats[self.idx(i, b)].count
    }

    /// Recorded replications summed over all pairs.
    pub fn total_count(&self) -> u64 {
        self.stats.iter().map(|s| s.count).sum()
    }

    /// Records one observation (already a batch average when batching).
    pub fn record(&mut self, i: usize, b: usize, y: f64) {
        let idx = self.idx(i, b);
        self.stats[idx].push(y);
    }

    /// Averages exactly `batch_size` raw outputs into one recorded observation.
    pub fn record_batch(&mut self, i: usize, b: usize, outputs: &[f64]) -> Result<(), LearningError> {
        if outputs.len() != self.batch_size {
            return Err(LearningError::BatchSize {
                expected: self.batch_size,
                actual: outputs.len(),
            });
        }
        let avg = outputs.iter().sum::<f64>() / outputs.len() as f64;
        self.record(i, b, avg);
        Ok(())
    }

    pub fn posterior_mean(&self, i: usize, b: usize) -> Result<f64, LearningError> {
        let s = self.stats(i, b);
        if s.count == 0 {
            return Err(LearningError::UninitializedPair { i, b });
        }
        Ok(s.mean)
    }

    /// Variance of one recorded observation: `λ²/c` when known, `S²`
    /// otherwise; clamped below at [`VARIANCE_FLOOR`].
    pub fn variance_estimate(&self, i: usize, b: usize) -> Result<f64, LearningError> {
        let idx = self.idx(i, b);
        let v = match &self.known_var {
            Some(known) => known[idx],
            None => {
                let s = self.stats[idx];
                if s.count < 2 {
                    return Err(LearningError::InsufficientData { i, b, count: s.count });
                }
                s.m2 / s.count as f64
            }
        };
        Ok(v.max(VARIANCE_FLOOR))
    }

    /// Posterior variance of the mean, `variance_estimate / N`.
    pub fn posterior_variance(&self, i: usize, b: usize) -> Result<f64, LearningError> {
        let n = self.count(i, b);
        if n == 0 {
            return Err(LearningError::UninitializedPair { i, b });
        }
        Ok(self.variance_estimate(i, b)? / n as f64)
    }

    /// One draw from `N(μ_n, σ²_n)` for the pair's unknown mean.
    pub fn sample_posterior_mean<R: Rng + ?Sized>(
        &self,
        i: usize,
        b: usize,
        rng: &mut R,
    ) -> Result<f64, LearningError> {
        let mean = self.posterior_mean(i, b)?;
        let var = self.posterior_variance(i, b)?;
        let z: f64 = StandardNormal.sample(rng);
        Ok(mean + var.sqrt() * z)
    }

    /// Plug-in statistics for every pair. Requires every pair to be
    /// initialized (two observations in normal–gamma mode).
    pub fn snapshot(&self) -> Result<PlugIn, LearningError> {
        let mut means = Vec::with_capacity(self.stats.len());
        let mut variances = Vec::with_capacity(self.stats.len());
        let mut counts = Vec::with_capacity(self.stats.len());
        for i in 0..self.k {
            for b in 0..self.n_params {
                means.push(self.posterior_mean(i, b)?);
                variances.push(self.variance_estimate(i, b)?);
                counts.push(self.count(i, b) as f64);
            }
        }
        Ok(PlugIn {
            k: self.k,
            n_params: self.n_params,
            means,
            variances,
            counts,
        })
    }
}

/// Plug-in estimates for all pairs, row-major `k × B`: posterior means,
/// per-observation variance estimates and replication counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugIn {
    pub k: usize,
    pub n_params: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub counts: Vec<f64>,
}

impl PlugIn {
    /// Builds plug-in statistics from `k × B` matrices.
    pub fn from_matrices(means: &[Vec<f64>], variances: &[Vec<f64>], counts: &[Vec<f64>]) -> Self {
        let k = means.len();
        let n_params = means.first().map_or(0, Vec::len);
        PlugIn {
            k,
            n_params,
            means: means.concat(),
            variances: variances.concat(),
            counts: counts.concat(),
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, b: usize) -> usize {
        i * self.n_params + b
    }

    #[inline]
    pub fn mean(&self, i: usize, b: usize) -> f64 {
        self.means[self.idx(i, b)]
    }

    #[inline]
    pub fn variance(&self, i: usize, b: usize) -> f64 {
        self.variances[self.idx(i, b)]
    }

    #[inline]
    pub fn count(&self, i: usize, b: usize) -> f64 {
        self.counts[self.idx(i, b)]
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }
}
