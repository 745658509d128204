//! Sequential sampling algorithms over a common skeleton: initialize every
//! pair with `n0` replications, then repeatedly pick one pair, simulate it,
//! and update the posterior until the budget is spent.
//!
//! The deciders are exposed as pure functions of a [`PlugIn`] snapshot. The
//! run loop uses the same decision code but maintains the conditional optima
//! and rate matrix incrementally, since one replication only changes one
//! column.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::{LearningError, LearningState, PlugIn, VarianceMode};
use crate::problem::ProblemInstance;
use crate::rates::{
    column_balance_gap, column_optimum, conditional_optima, estimate_from_plugin, weight_entry, EstimatedTruth,
    RateMatrix, RatesError, Weight, WeightVariant,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Rates(#[from] RatesError),
    #[error("known-variance mode needs the noise scale of every pair")]
    UnknownNoise,
    #[error("unknown sampler {0:?}")]
    UnknownSampler(String),
}

/// A stochastic simulator over `k` solutions and `B` input parameters.
pub trait Simulator {
    fn k(&self) -> usize;
    fn n_params(&self) -> usize;
    fn probs(&self) -> &[f64];
    /// One raw simulation output of solution `i` at parameter `b`.
    fn sample<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64;
    /// Noise standard deviation `λ_i(θ_b)` when it is known.
    fn noise_scale(&self, _i: usize, _b: usize) -> Option<f64> {
        None
    }
}

impl Simulator for ProblemInstance {
    fn k(&self) -> usize {
        ProblemInstance::k(self)
    }

    fn n_params(&self) -> usize {
        ProblemInstance::n_params(self)
    }

    fn probs(&self) -> &[f64] {
        ProblemInstance::probs(self)
    }

    fn sample<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64 {
        self.simulate_output(i, b, rng)
    }

    fn noise_scale(&self, i: usize, b: usize) -> Option<f64> {
        Some(self.noise(i, b).lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    EqualAllocation,
    COcba,
    Alg1,
    Alg2,
    Alg3,
    Alg4,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::Alg1,
        SamplerKind::Alg2,
        SamplerKind::Alg3,
        SamplerKind::Alg4,
        SamplerKind::EqualAllocation,
        SamplerKind::COcba,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::EqualAllocation => "ea",
            SamplerKind::COcba => "cocba",
            SamplerKind::Alg1 => "alg1",
            SamplerKind::Alg2 => "alg2",
            SamplerKind::Alg3 => "alg3",
            SamplerKind::Alg4 => "alg4",
        }
    }

    /// Comma-separated list such as `alg2,ea`.
    pub fn parse_list(text: &str) -> Result<Vec<SamplerKind>, SamplerError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ea" | "equal" | "equal_allocation" => Ok(SamplerKind::EqualAllocation),
            "cocba" | "c-ocba" | "c_ocba" => Ok(SamplerKind::COcba),
            "alg1" => Ok(SamplerKind::Alg1),
            "alg2" => Ok(SamplerKind::Alg2),
            "alg3" => Ok(SamplerKind::Alg3),
            "alg4" => Ok(SamplerKind::Alg4),
            _ => Err(SamplerError::UnknownSampler(s.to_string())),
        }
    }
}

/// Budgets are counted in recorded observations; with `batch_size = c` each
/// recorded observation averages `c` raw outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n0: u64,
    pub budget: u64,
    pub batch_size: usize,
    pub variance_mode: VarianceMode,
    /// Sorted budgets in `(n0·k·B, budget]` at which the trace is recorded.
    pub checkpoints: Vec<u64>,
    pub seed: u64,
    /// Keep every sequential decision in the trace.
    #[serde(default)]
    pub record_decisions: bool,
}

impl RunConfig {
    /// Known-variance configuration without batching, checkpointed at the end.
    pub fn new(n0: u64, budget: u64) -> Self {
        RunConfig {
            n0,
            budget,
            batch_size: 1,
            variance_mode: VarianceMode::KnownVariance,
            checkpoints: vec![budget],
            seed: 0,
            record_decisions: false,
        }
    }

    pub fn initial_budget(&self, k: usize, n_params: usize) -> u64 {
        self.n0 * (k * n_params) as u64
    }

    pub fn validate(&self, k: usize, n_params: usize) -> Result<(), SamplerError> {
        let err = |m: String| Err(SamplerError::Config(m));
        if self.n0 == 0 {
            return err("n0 must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if self.variance_mode == VarianceMode::NormalGamma && self.n0 < 2 {
            return err("unknown-variance runs need n0 >= 2".into());
        }
        let start = self.initial_budget(k, n_params);
        if start > self.budget {
            return err(format!("budget {} is below n0*k*B = {start}", self.budget));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return err("checkpoints must be strictly increasing".into());
        }
        if let (Some(&first), Some(&last)) = (self.checkpoints.first(), self.checkpoints.last()) {
            if first <= start || last > self.budget {
                return err(format!("checkpoints must lie in ({start}, {}]", self.budget));
            }
        }
        Ok(())
    }
}

/// `count` roughly log-spaced budgets in `(start, end]`, always ending at `end`.
pub fn log_checkpoints(start: u64, end: u64, count: usize) -> Vec<u64> {
    if end <= start || count == 0 {
        return Vec::new();
    }
    let (lo, hi) = ((start.max(1)) as f64, end as f64);
    let mut out: Vec<u64> = (1..=count)
        .map(|t| (lo * (hi / lo).powf(t as f64 / count as f64)).round() as u64)
        .filter(|&c| c > start && c <= end)
        .collect();
    out.push(end);
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub budget: u64,
    pub mpb_hat: usize,
    /// More than one solution shares the largest estimated preference.
    pub tie: bool,
    /// `θ_b ∈ Θ_n^*`.
    pub fav_set: Vec<bool>,
    pub cond_opt: Vec<usize>,
    /// Row-major `k × B` replication counts.
    pub counts: Vec<u64>,
}

impl CheckpointRecord {
    pub fn count(&self, i: usize, b: usize) -> u64 {
        self.counts[i * self.fav_set.len() + b]
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub kind: SamplerKind,
    pub checkpoints: Vec<CheckpointRecord>,
    pub final_state: LearningState,
    /// Sequential decisions after initialization, if requested.
    pub decisions: Vec<(usize, usize)>,
}

fn argmin_entries(
    est: &EstimatedTruth,
    g: &RateMatrix,
    probs: &[f64],
    variant: WeightVariant,
) -> Result<(usize, usize), RatesError> {
    let min_gap = est.min_gap();
    let mut best: Option<(usize, usize, f64)> = None;
    for b in 0..est.n_params() {
        for i in 0..est.k() {
            if let Weight::Finite(w) = weight_entry(est, probs, min_gap, variant, i, b) {
                let product = w * g.get(i, b);
                if best.is_none_or(|(_, _, p)| product < p) {
                    best = Some((i, b, product));
                }
            }
        }
    }
    best.map(|(i, b, _)| (i, b)).ok_or(RatesError::AllExcluded)
}

/// Weighted-rate argmin followed by the global balance check at its column.
fn weighted_decision(
    est: &EstimatedTruth,
    g: &RateMatrix,
    plugin: &PlugIn,
    probs: &[f64],
    variant: WeightVariant,
    exclude_mpb: bool,
) -> Result<(usize, usize), RatesError> {
    let (i, b) = match argmin_entries(est, g, probs, variant) {
        Err(RatesError::AllExcluded) if variant == WeightVariant::Standard => {
            argmin_entries(est, g, probs, WeightVariant::Fn)?
        }
        other => other?,
    };
    let r = est.cond_opt[b];
    let column = (0..plugin.k).map(|j| (plugin.count(j, b), plugin.variance(j, b)));
    if column_balance_gap(column, r, est.mpb, exclude_mpb) < 0.0 {
        Ok((r, b))
    } else {
        Ok((i, b))
    }
}

fn alg2_decision<R: Rng + ?Sized>(
    est: &EstimatedTruth,
    g: &RateMatrix,
    plugin: &PlugIn,
    probs: &[f64],
    rng: &mut R,
) -> Result<(usize, usize), RatesError> {
    let mpb = est.mpb;
    let mut cond_opt = est.cond_opt.clone();
    let mut drawn_rates = g.clone();
    for b in 0..plugin.n_params {
        if cond_opt[b] == mpb {
            continue;
        }
        let z: f64 = StandardNormal.sample(rng);
        let sd = (plugin.variance(mpb, b) / plugin.count(mpb, b)).sqrt();
        let drawn = plugin.mean(mpb, b) + sd * z;
        let mean_of = |j: usize| if j == mpb { drawn } else { plugin.mean(j, b) };
        let r = column_optimum(plugin.k, mean_of);
        cond_opt[b] = r;
        drawn_rates.refresh_column(plugin, r, b, mean_of);
    }
    let updated = EstimatedTruth::from_cond_opt(plugin.k, cond_opt, probs, &drawn_rates, Some(mpb));
    weighted_decision(&updated, &drawn_rates, plugin, probs, WeightVariant::Standard, true)
}

fn decide_with<R: Rng + ?Sized>(
    kind: SamplerKind,
    est: &EstimatedTruth,
    g: &RateMatrix,
    plugin: &PlugIn,
    probs: &[f64],
    rng: &mut R,
) -> Result<(usize, usize), RatesError> {
    match kind {
        SamplerKind::Alg1 => weighted_decision(est, g, plugin, probs, WeightVariant::Standard, true),
        SamplerKind::Alg2 => alg2_decision(est, g, plugin, probs, rng),
        SamplerKind::Alg3 => weighted_decision(est, g, plugin, probs, WeightVariant::Acc, false),
        SamplerKind::Alg4 => weighted_decision(est, g, plugin, probs, WeightVariant::Fn, false),
        SamplerKind::COcba => weighted_decision(est, g, plugin, probs, WeightVariant::Unit, false),
        SamplerKind::EqualAllocation => {
            unreachable!("equal allocation follows a fixed schedule")
        }
    }
}

/// Plug-in sampling rule: standard weights, balance sum without the MPB.
pub fn decide_alg1(plugin: &PlugIn, probs: &[f64]) -> Result<(usize, usize), RatesError> {
    let (est, g) = estimate_from_plugin(plugin, probs);
    weighted_decision(&est, &g, plugin, probs, WeightVariant::Standard, true)
}

/// Plug-in rule after replacing the MPB's means on its estimated adversarial
/// set with one posterior draw each (ascending parameter order).
pub fn decide_alg2<R: Rng + ?Sized>(plugin: &PlugIn, probs: &[f64], rng: &mut R) -> Result<(usize, usize), RatesError> {
    let (est, g) = estimate_from_plugin(plugin, probs);
    alg2_decision(&est, &g, plugin, probs, rng)
}

/// Accuracy weights with the full balance sum.
pub fn decide_alg3(plugin: &PlugIn, probs: &[f64]) -> Result<(usize, usize), RatesError> {
    let (est, g) = estimate_from_plugin(plugin, probs);
    weighted_decision(&est, &g, plugin, probs, WeightVariant::Acc, false)
}

/// False-negative weights with the full balance sum.
pub fn decide_alg4(plugin: &PlugIn, probs: &[f64]) -> Result<(usize, usize), RatesError> {
    let (est, g) = estimate_from_plugin(plugin, probs);
    weighted_decision(&est, &g, plugin, probs, WeightVariant::Fn, false)
}

/// Unit weights with the full balance sum.
pub fn decide_cocba(plugin: &PlugIn, probs: &[f64]) -> Result<(usize, usize), RatesError> {
    let (est, g) = estimate_from_plugin(plugin, probs);
    weighted_decision(&est, &g, plugin, probs, WeightVariant::Unit, false)
}

/// Plug-in state kept in sync with the learner one column at a time.
struct Engine<'p> {
    probs: &'p [f64],
    plugin: PlugIn,
    cond_opt: Vec<usize>,
    rates: RateMatrix,
}

impl<'p> Engine<'p> {
    fn new(learning: &LearningState, probs: &'p [f64]) -> Result<Self, LearningError> {
        let plugin = learning.snapshot()?;
        let cond_opt = conditional_optima(&plugin);
        let rates = RateMatrix::from_plugin(&plugin, &cond_opt);
        Ok(Engine {
            probs,
            plugin,
            cond_opt,
            rates,
        })
    }

    fn update(&mut self, learning: &LearningState, i: usize, b: usize) -> Result<(), LearningError> {
        let idx = self.plugin.idx(i, b);
        self.plugin.means[idx] = learning.posterior_mean(i, b)?;
        self.plugin.variances[idx] = learning.variance_estimate(i, b)?;
        self.plugin.counts[idx] = learning.count(i, b) as f64;
        let plugin = &self.plugin;
        let r = column_optimum(plugin.k, |j| plugin.mean(j, b));
        self.cond_opt[b] = r;
        self.rates.refresh_column(plugin, r, b, |j| plugin.mean(j, b));
        Ok(())
    }

    fn estimate(&self) -> EstimatedTruth {
        EstimatedTruth::from_cond_opt(self.plugin.k, self.cond_opt.clone(), self.probs, &self.rates, None)
    }
}

fn simulate_into<S: Simulator + ?Sized, R: Rng + ?Sized>(
    sim: &S,
    learning: &mut LearningState,
    buf: &mut Vec<f64>,
    i: usize,
    b: usize,
    rng: &mut R,
) -> Result<(), LearningError> {
    buf.clear();
    for _ in 0..learning.batch_size() {
        buf.push(sim.sample(i, b, rng));
    }
    learning.record_batch(i, b, buf)
}

fn new_learning<S: Simulator + ?Sized>(sim: &S, config: &RunConfig) -> Result<LearningState, SamplerError> {
    Ok(match config.variance_mode {
        VarianceMode::KnownVariance => {
            let lambdas = (0..sim.k())
                .map(|i| {
                    (0..sim.n_params())
                        .map(|b| sim.noise_scale(i, b).ok_or(SamplerError::UnknownNoise))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            LearningState::known_variance(&lambdas, config.batch_size)
        }
        VarianceMode::NormalGamma => LearningState::normal_gamma(sim.k(), sim.n_params(), config.batch_size),
    })
}

/// Runs one sampler until `config.budget` observations are recorded.
pub fn run<S: Simulator + ?Sized, R: Rng + ?Sized>(
    kind: SamplerKind,
    sim: &S,
    config: &RunConfig,
    rng: &mut R,
) -> Result<RunTrace, SamplerError> {
    let (k, n_params) = (sim.k(), sim.n_params());
    config.validate(k, n_params)?;
    let probs = sim.probs();
    let mut learning = new_learning(sim, config)?;
    let mut buf = Vec::with_capacity(config.batch_size);

    for b in 0..n_params {
        for i in 0..k {
            for _ in 0..config.n0 {
                simulate_into(sim, &mut learning, &mut buf, i, b, rng)?;
            }
        }
    }

    let mut engine = Engine::new(&learning, probs)?;
    let mut checkpoints = Vec::with_capacity(config.checkpoints.len());
    let mut pending = config.checkpoints.iter().peekable();
    let mut decisions = Vec::new();
    let pairs = (k * n_params) as u64;
    let mut n = config.initial_budget(k, n_params);
    let mut step = 0u64;

    while n < config.budget {
        let (i, b) = match kind {
            SamplerKind::EqualAllocation => {
                let slot = (step % pairs) as usize;
                (slot % k, slot / k)
            }
            _ => {
                let est = engine.estimate();
                decide_with(kind, &est, &engine.rates, &engine.plugin, probs, rng)?
            }
        };
        simulate_into(sim, &mut learning, &mut buf, i, b, rng)?;
        engine.update(&learning, i, b)?;
        if config.record_decisions {
            decisions.push((i, b));
        }
        n += 1;
        step += 1;
        if pending.peek() == Some(&&n) {
            pending.next();
            let est = engine.estimate();
            checkpoints.push(CheckpointRecord {
                budget: n,
                mpb_hat: est.mpb,
                tie: est.is_tie(),
                counts: engine.plugin.counts.iter().map(|&c| c as u64).collect(),
                fav_set: est.fav_set,
                cond_opt: est.cond_opt,
            });
        }
    }

    Ok(RunTrace {
        kind,
        checkpoints,
        final_state: learning,
        decisions,
    })
}
