//! Problem instances, ground truth and the synthetic benchmark scenarios.
//!
//! Conventions: smaller means are better (the conditional optimum at `θ_b`
//! is the row minimizing column `b`), and both solutions and parameters are
//! zero-based. Scenario layouts quoted in the docs below use the one-based
//! numbering of the benchmark descriptions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Preference probabilities closer than this are treated as tied.
pub const PREF_TIE_TOL: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("need at least 2 solutions, got {0}")]
    TooFewSolutions(usize),
    #[error("need at least 1 input parameter, got {0}")]
    TooFewParameters(usize),
    #[error("{what} has wrong shape: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("simplex weights must be nonnegative and sum to 1 (sum = {sum})")]
    BadSimplex { sum: f64 },
    #[error("mean at ({i}, {b}) is not finite")]
    NonFiniteMean { i: usize, b: usize },
    #[error("noise scale at ({i}, {b}) must be positive and finite, got {lambda}")]
    BadLambda { i: usize, b: usize, lambda: f64 },
    #[error("unknown scenario '{0}' (expected baseline, s1, s2, s3, s4 or s5)")]
    UnknownScenario(String),
    #[error("malformed instance file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianKnownVar,
    GaussianUnknownVar,
    /// `y - λ + Exp(mean λ)`: mean `y`, standard deviation `λ`.
    ShiftedExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Conditional standard deviation of one output.
    pub lambda: f64,
}

impl NoiseModel {
    pub fn gaussian(lambda: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::GaussianKnownVar,
            lambda,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::GaussianKnownVar | NoiseKind::GaussianUnknownVar => {
                let z: f64 = StandardNormal.sample(rng);
                mean + self.lambda * z
            }
            NoiseKind::ShiftedExponential => {
                let e: f64 = Exp1.sample(rng);
                mean - self.lambda + self.lambda * e
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    k: usize,
    #[serde(rename = "B")]
    n_params: usize,
    probs: Vec<f64>,
    means: Vec<Vec<f64>>,
    noise: Vec<Vec<NoiseModel>>,
}

impl TryFrom<RawInstance> for ProblemInstance {
    type Error = ProblemError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        let inst = ProblemInstance {
            k: raw.k,
            n_params: raw.n_params,
            probs: raw.probs,
            means: raw.means,
            noise: raw.noise,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// A `k × B` problem: simplex weights, true conditional means and per-pair
/// noise models. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct ProblemInstance {
    k: usize,
    #[serde(rename = "B")]
    n_params: usize,
    probs: Vec<f64>,
    /// `means[i][b]`
    means: Vec<Vec<f64>>,
    /// `noise[i][b]`
    noise: Vec<Vec<NoiseModel>>,
}

impl ProblemInstance {
    pub fn new(
        probs: Vec<f64>,
        means: Vec<Vec<f64>>,
        noise: Vec<Vec<NoiseModel>>,
    ) -> Result<Self, ProblemError> {
        let inst = ProblemInstance {
            k: means.len(),
            n_params: probs.len(),
            probs,
            means,
            noise,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Instance with Gaussian known-variance noise of a common scale.
    pub fn gaussian(probs: Vec<f64>, means: Vec<Vec<f64>>, lambda: f64) -> Result<Self, ProblemError> {
        let noise = means
            .iter()
            .map(|row| vec![NoiseModel::gaussian(lambda); row.len()])
            .collect();
        Self::new(probs, means, noise)
    }

    fn validate(&self) -> Result<(), ProblemError> {
        if self.k < 2 {
            return Err(ProblemError::TooFewSolutions(self.k));
        }
        if self.n_params < 1 {
            return Err(ProblemError::TooFewParameters(self.n_params));
        }
        let shape = |what, expected, actual| {
            if expected == actual {
                Ok(())
            } else {
                Err(ProblemError::Shape {
                    what,
                    expected,
                    actual,
                })
            }
        };
        shape("probs", self.n_params, self.probs.len())?;
        shape("means", self.k, self.means.len())?;
        shape("noise", self.k, self.noise.len())?;
        let sum: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(ProblemError::BadSimplex { sum });
        }
        for i in 0..self.k {
            shape("means row", self.n_params, self.means[i].len())?;
            shape("noise row", self.n_params, self.noise[i].len())?;
            for b in 0..self.n_params {
                if !self.means[i][b].is_finite() {
                    return Err(ProblemError::NonFiniteMean { i, b });
                }
                let lambda = self.noise[i][b].lambda;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(ProblemError::BadLambda { i, b, lambda });
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        serde_json::from_str(text).map_err(|e| ProblemError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self, i: usize, b: usize) -> f64 {
        self.means[i][b]
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn noise(&self, i: usize, b: usize) -> NoiseModel {
        self.noise[i][b]
    }

    /// Variances `λ²` as a `k × B` matrix.
    pub fn variances(&self) -> Vec<Vec<f64>> {
        self.noise
            .iter()
            .map(|row| row.iter().map(|n| n.lambda * n.lambda).collect())
            .collect()
    }

    /// One simulation output at `(i, θ_b)`.
    pub fn simulate_output<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64 {
        self.noise[i][b].sample(self.means[i][b], rng)
    }

    pub fn derive_truth(&self) -> TruthSummary {
        TruthSummary::from_means(&self.means, &self.probs)
    }
}

/// Ground truth derived from known means.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSummary {
    /// Conditional optimum `i^b` per parameter (lowest index on ties).
    pub cond_opt: Vec<usize>,
    /// `Θ_i`: parameters at which solution `i` is the conditional optimum.
    pub favorable_sets: Vec<Vec<usize>>,
    pub pref_probs: Vec<f64>,
    /// `d_j = P(Θ_{i*}) - P(Θ_j)`.
    pub gaps: Vec<f64>,
    pub mpb: usize,
    pub unique_inner: Vec<bool>,
    pub unique_outer: bool,
}

impl TruthSummary {
    /// Ground truth from a `k × B` mean matrix (minimization convention).
    pub fn from_means(means: &[Vec<f64>], probs: &[f64]) -> Self {
        let k = means.len();
        let n_params = probs.len();
        let mut cond_opt = Vec::with_capacity(n_params);
        let mut unique_inner = Vec::with_capacity(n_params);
        for b in 0..n_params {
            let mut best = 0;
            for i in 1..k {
                if means[i][b] < means[best][b] {
                    best = i;
                }
            }
            let ties = (0..k).filter(|&i| means[i][b] == means[best][b]).count();
            cond_opt.push(best);
            unique_inner.push(ties == 1);
        }
        Self::from_cond_opt(k, cond_opt, unique_inner, probs)
    }

    pub(crate) fn from_cond_opt(
        k: usize,
        cond_opt: Vec<usize>,
        unique_inner: Vec<bool>,
        probs: &[f64],
    ) -> Self {
        let mut favorable_sets = vec![Vec::new(); k];
        let mut pref_probs = vec![0.0; k];
        for (b, &i) in cond_opt.iter().enumerate() {
            favorable_sets[i].push(b);
            pref_probs[i] += probs[b];
        }
        let mpb = argmax_first(&pref_probs);
        let unique_outer = (0..k)
            .filter(|&j| j != mpb)
            .all(|j| pref_probs[mpb] - pref_probs[j] > PREF_TIE_TOL);
        let gaps = pref_probs.iter().map(|p| pref_probs[mpb] - p).collect();
        TruthSummary {
            cond_opt,
            favorable_sets,
            pref_probs,
            gaps,
            mpb,
            unique_inner,
            unique_outer,
        }
    }

    pub fn k(&self) -> usize {
        self.pref_probs.len()
    }

    pub fn n_params(&self) -> usize {
        self.cond_opt.len()
    }

    /// All inner and outer optima are unique.
    pub fn is_unique(&self) -> bool {
        self.unique_outer && self.unique_inner.iter().all(|u| *u)
    }

    /// `θ_b ∈ Θ_{i*}`.
    pub fn in_mpb_favorable(&self, b: usize) -> bool {
        self.cond_opt[b] == self.mpb
    }
}

/// Index of the first maximal entry, treating entries within
/// [`PREF_TIE_TOL`] of the maximum as tied.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|v| max - v <= PREF_TIE_TOL)
        .unwrap_or(0)
}

/// The catalogued synthetic scenarios (`k = 10`, `B = 50`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Baseline,
    S1DominantMpb,
    S2HighVariance,
    S3NonNormal,
    S4UnequalProbs,
    S5UnequalProbsHard,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Baseline,
        Scenario::S1DominantMpb,
        Scenario::S2HighVariance,
        Scenario::S3NonNormal,
        Scenario::S4UnequalProbs,
        Scenario::S5UnequalProbsHard,
    ];

    pub const K: usize = 10;
    pub const B: usize = 50;

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::S1DominantMpb => "s1",
            Scenario::S2HighVariance => "s2",
            Scenario::S3NonNormal => "s3",
            Scenario::S4UnequalProbs => "s4",
            Scenario::S5UnequalProbsHard => "s5",
        }
    }

    /// Conditional optima (zero-based) and simplex weights per parameter.
    ///
    /// One-based layouts:
    /// - baseline: `i^b = ℓ` for `5ℓ-4 ≤ b ≤ 5ℓ`, `ℓ ≤ 7`; `8` on 36..41; `10` on 42..50; `p_b = 1/50`.
    /// - s1: as baseline on 1..35, `10` on 36..50.
    /// - s2, s3: baseline layout.
    /// - s4: consecutive blocks of five parameters for solutions 2..7 at
    ///   `p_b = 0.016` (b = 1..30), 8..9 at `0.032` (b = 31..40), and
    ///   solution 10 at `0.02` on 41..50.
    /// - s5: s4 with `(9, 0.016)` on 36..45 and `(10, 0.04)` on 46..50.
    pub fn layout(&self) -> (Vec<usize>, Vec<f64>) {
        let mut cond_opt = Vec::with_capacity(Self::B);
        let mut probs = Vec::with_capacity(Self::B);
        for b in 1..=Self::B {
            let block = b.div_ceil(5);
            let (opt, p) = match self {
                Scenario::Baseline | Scenario::S2HighVariance | Scenario::S3NonNormal => match b {
                    1..=35 => (block, 0.02),
                    36..=41 => (8, 0.02),
                    _ => (10, 0.02),
                },
                Scenario::S1DominantMpb => match b {
                    1..=35 => (block, 0.02),
                    _ => (10, 0.02),
                },
                Scenario::S4UnequalProbs => match b {
                    1..=30 => (block + 1, 0.016),
                    31..=40 => (block + 1, 0.032),
                    _ => (10, 0.02),
                },
                Scenario::S5UnequalProbsHard => match b {
                    1..=30 => (block + 1, 0.016),
                    31..=35 => (8, 0.032),
                    36..=45 => (9, 0.016),
                    _ => (10, 0.04),
                },
            };
            cond_opt.push(opt - 1);
            probs.push(p);
        }
        (cond_opt, probs)
    }

    /// Range of the uniform distribution the noise scales are drawn from.
    pub fn lambda_range(&self) -> (f64, f64) {
        match self {
            Scenario::S2HighVariance => (8.0, 12.0),
            _ => (4.0, 6.0),
        }
    }

    pub fn noise_kind(&self) -> NoiseKind {
        match self {
            Scenario::S3NonNormal => NoiseKind::ShiftedExponential,
            _ => NoiseKind::GaussianKnownVar,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Scenario::Baseline),
            "s1" | "s1_dominantmpb" | "s1-dominant-mpb" => Ok(Scenario::S1DominantMpb),
            "s2" | "s2_highvariance" | "s2-high-variance" => Ok(Scenario::S2HighVariance),
            "s3" | "s3_nonnormal" | "s3-non-normal" => Ok(Scenario::S3NonNormal),
            "s4" | "s4_unequalprobs" | "s4-unequal-probs" => Ok(Scenario::S4UnequalProbs),
            "s5" | "s5_unequalprobshard" | "s5-unequal-probs-hard" => {
                Ok(Scenario::S5UnequalProbsHard)
            }
            _ => Err(ProblemError::UnknownScenario(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub seed: u64,
}

/// Draws a fresh instance of `scenario`.
///
/// Column by column, the conditional optimum gets mean 1 and the other rows
/// receive a uniformly random permutation of `{2, .., k}`. The noise scales
/// are then drawn i.i.d. uniform, row by row.
pub fn generate_synthetic<R: Rng + ?Sized>(scenario: Scenario, rng: &mut R) -> ProblemInstance {
    let k = Scenario::K;
    let (cond_opt, probs) = scenario.layout();
    let mut means = vec![vec![0.0; Scenario::B]; k];
    let mut fill: Vec<f64> = (2..=k).map(|v| v as f64).collect();
    for (b, &opt) in cond_opt.iter().enumerate() {
        fill.shuffle(rng);
        let mut rest = fill.iter();
        for (i, row) in means.iter_mut().enumerate() {
            row[b] = if i == opt {
                1.0
            } else {
                *rest.next().expect("k - 1 fill values")
            };
        }
    }
    let (lo, hi) = scenario.lambda_range();
    let dist = Uniform::new(lo, hi).expect("valid range");
    let kind = scenario.noise_kind();
    let noise = (0..k)
        .map(|_| {
            (0..Scenario::B)
                .map(|_| NoiseModel {
                    kind,
                    lambda: dist.sample(rng),
                })
                .collect()
        })
        .collect();
    ProblemInstance::new(probs, means, noise).expect("catalogued scenarios are valid")
}

pub fn generate_from_spec(spec: ScenarioSpec) -> ProblemInstance {
    generate_synthetic(spec.scenario, &mut crate::rng::from_seed(spec.seed))
}
