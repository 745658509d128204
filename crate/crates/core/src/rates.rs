//! Large-deviation rates, balance weights and the weighted-rate sampling rule.
//!
//! Rates are evaluated with replication counts in place of allocation
//! fractions. `G` is positively homogeneous of degree one in the allocation,
//! so this rescales every entry by the same factor `n` and leaves every
//! comparison made here unchanged.

use std::fmt::Write as _;

use thiserror::Error;

use crate::learning::{LearningError, LearningState, PlugIn};
use crate::problem::{TruthSummary, PREF_TIE_TOL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RatesError {
    #[error("every entry of the weight matrix is excluded")]
    AllExcluded,
}

/// Rate of an incorrect pairwise comparison between a solution and the
/// reference (conditional optimum) at one parameter:
/// `δ² / (2 (var_i/α_i + var_ref/α_ref))`, and 0 when either allocation is 0.
#[inline]
pub fn rate_g(delta: f64, var_i: f64, var_ref: f64, alpha_i: f64, alpha_ref: f64) -> f64 {
    if alpha_i <= 0.0 || alpha_ref <= 0.0 {
        return 0.0;
    }
    delta * delta / (2.0 * (var_i / alpha_i + var_ref / alpha_ref))
}

/// `k × B` matrix of rates `G_i(θ_b)` against the conditional optimum of
/// each column. Entries on the conditional optima are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    k: usize,
    n_params: usize,
    values: Vec<f64>,
}

impl RateMatrix {
    /// Rates from row-major `means`, `variances` and `alloc` (fractions or
    /// counts) with reference rows `cond_opt`.
    pub fn compute(
        k: usize,
        n_params: usize,
        means: &[f64],
        variances: &[f64],
        alloc: &[f64],
        cond_opt: &[usize],
    ) -> Self {
        let mut values = vec![0.0; k * n_params];
        for (b, &r) in cond_opt.iter().enumerate() {
            let ref_idx = r * n_params + b;
            for i in 0..k {
                if i == r {
                    continue;
                }
                let idx = i * n_params + b;
                values[idx] = rate_g(
                    means[idx] - means[ref_idx],
                    variances[idx],
                    variances[ref_idx],
                    alloc[idx],
                    alloc[ref_idx],
                );
            }
        }
        RateMatrix {
            k,
            n_params,
            values,
        }
    }

    pub fn from_plugin(plugin: &PlugIn, cond_opt: &[usize]) -> Self {
        Self::compute(
            plugin.k,
            plugin.n_params,
            &plugin.means,
            &plugin.variances,
            &plugin.counts,
            cond_opt,
        )
    }

    /// Rates at the true means for a given `k × B` allocation.
    pub fn from_allocation(
        means: &[Vec<f64>],
        variances: &[Vec<f64>],
        alloc: &[Vec<f64>],
        cond_opt: &[usize],
    ) -> Self {
        Self::compute(
            means.len(),
            cond_opt.len(),
            &means.concat(),
            &variances.concat(),
            &alloc.concat(),
            cond_opt,
        )
    }

    /// Matrix with explicitly given entries (row-major).
    pub fn from_values(k: usize, n_params: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), k * n_params);
        RateMatrix {
            k,
            n_params,
            values,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, b: usize) -> f64 {
        self.values[i * self.n_params + b]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Recomputes column `b` against reference `r`, reading the mean of
    /// solution `i` from `mean_of(i)`.
    pub(crate) fn refresh_column(&mut self, plugin: &PlugIn, r: usize, b: usize, mean_of: impl Fn(usize) -> f64) {
        let ref_mean = mean_of(r);
        let ref_var = plugin.variance(r, b);
        let ref_count = plugin.count(r, b);
        for i in 0..self.k {
            self.values[i * self.n_params + b] = if i == r {
                0.0
            } else {
                rate_g(
                    mean_of(i) - ref_mean,
                    plugin.variance(i, b),
                    ref_var,
                    plugin.count(i, b),
                    ref_count,
                )
            };
        }
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        RateMatrix {
            k: self.k,
            n_params: self.n_params,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(self.k, self.n_params, |i, b| self.get(i, b).to_string())
    }
}

/// Plug-in (or true) optima, favorable set of the (estimated) MPB and the
/// quantities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedTruth {
    /// `i_n^b` per parameter.
    pub cond_opt: Vec<usize>,
    /// `i_n^*` after tie-breaking.
    pub mpb: usize,
    /// Every solution sharing the maximal estimated preference probability.
    pub tie_set: Vec<usize>,
    /// `θ_b ∈ Θ_n^*`, i.e. `i_n^b = i_n^*`.
    pub fav_set: Vec<bool>,
    pub pref: Vec<f64>,
    /// `d_{i,n} = pref[mpb] - pref[i]`.
    pub gaps: Vec<f64>,
}

impl EstimatedTruth {
    /// Builds the estimate from conditional optima. When `frozen_mpb` is
    /// given it is kept as the MPB; otherwise ties for the largest preference
    /// are broken by [`break_tie`] using `rates`.
    pub fn from_cond_opt(
        k: usize,
        cond_opt: Vec<usize>,
        probs: &[f64],
        rates: &RateMatrix,
        frozen_mpb: Option<usize>,
    ) -> Self {
        let mut pref = vec![0.0; k];
        for (b, &i) in cond_opt.iter().enumerate() {
            pref[i] += probs[b];
        }
        let max = pref.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tie_set: Vec<usize> = (0..k).filter(|&i| max - pref[i] <= PREF_TIE_TOL).collect();
        let mpb = match frozen_mpb {
            Some(m) => m,
            None if tie_set.len() == 1 => tie_set[0],
            None => break_tie(&tie_set, &cond_opt, rates),
        };
        let fav_set = cond_opt.iter().map(|&i| i == mpb).collect();
        let gaps = pref.iter().map(|p| pref[mpb] - p).collect();
        EstimatedTruth {
            cond_opt,
            mpb,
            tie_set,
            fav_set,
            pref,
            gaps,
        }
    }

    /// The true quantities viewed through the same interface.
    pub fn from_truth(truth: &TruthSummary) -> Self {
        let mpb = truth.mpb;
        let tie_set = (0..truth.k())
            .filter(|&j| truth.pref_probs[mpb] - truth.pref_probs[j] <= PREF_TIE_TOL)
            .collect();
        EstimatedTruth {
            cond_opt: truth.cond_opt.clone(),
            mpb,
            tie_set,
            fav_set: truth.cond_opt.iter().map(|&i| i == mpb).collect(),
            pref: truth.pref_probs.clone(),
            gaps: truth.gaps.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.pref.len()
    }

    pub fn n_params(&self) -> usize {
        self.cond_opt.len()
    }

    pub fn is_tie(&self) -> bool {
        self.tie_set.len() > 1
    }

    /// `(i, θ_b) ∈ Ξ_n`: neither the conditional optimum nor the MPB.
    #[inline]
    pub fn in_xi(&self, i: usize, b: usize) -> bool {
        i != self.cond_opt[b] && i != self.mpb
    }

    /// `(i, θ_b) ∈ Ξ_n^adv`: the MPB at a parameter outside its favorable set.
    #[inline]
    pub fn in_xi_adv(&self, i: usize, b: usize) -> bool {
        i == self.mpb && !self.fav_set[b]
    }

    pub fn xi(&self) -> Vec<(usize, usize)> {
        self.pairs(|i, b| self.in_xi(i, b))
    }

    pub fn xi_adv(&self) -> Vec<(usize, usize)> {
        self.pairs(|i, b| self.in_xi_adv(i, b))
    }

    fn pairs(&self, keep: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
        (0..self.n_params())
            .flat_map(|b| (0..self.k()).map(move |i| (i, b)))
            .filter(|&(i, b)| keep(i, b))
            .collect()
    }

    /// `min_{j ≠ i*} d_j`.
    pub fn min_gap(&self) -> f64 {
        self.gaps
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != self.mpb)
            .map(|(_, d)| *d)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Argmin over each column of the plug-in means (lowest index on ties).
pub fn conditional_optima(plugin: &PlugIn) -> Vec<usize> {
    (0..plugin.n_params)
        .map(|b| column_optimum(plugin.k, |i| plugin.mean(i, b)))
        .collect()
}

#[inline]
pub(crate) fn column_optimum(k: usize, mean_of: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_mean = mean_of(0);
    for i in 1..k {
        let m = mean_of(i);
        if m < best_mean {
            best = i;
            best_mean = m;
        }
    }
    best
}

/// Among tied MPB candidates, picks the one whose weakest comparison on its
/// estimated adversarial set has the largest rate:
/// `argmax_j min_{b : i_n^b ≠ j} G_j(θ_b)`. An empty adversarial set counts
/// as `+∞`; remaining ties go to the lowest index.
pub fn break_tie(tie_set: &[usize], cond_opt: &[usize], rates: &RateMatrix) -> usize {
    let mut best = tie_set[0];
    let mut best_rate = f64::NEG_INFINITY;
    for &j in tie_set {
        let rate = cond_opt
            .iter()
            .enumerate()
            .filter(|(_, &opt)| opt != j)
            .map(|(b, _)| rates.get(j, b))
            .fold(f64::INFINITY, f64::min);
        if rate > best_rate {
            best = j;
            best_rate = rate;
        }
    }
    best
}

/// Plug-in truth and rate matrix of a snapshot.
pub fn estimate_from_plugin(plugin: &PlugIn, probs: &[f64]) -> (EstimatedTruth, RateMatrix) {
    let cond_opt = conditional_optima(plugin);
    let rates = RateMatrix::from_plugin(plugin, &cond_opt);
    let est = EstimatedTruth::from_cond_opt(plugin.k, cond_opt, probs, &rates, None);
    (est, rates)
}

pub fn estimate_truth(learning: &LearningState, probs: &[f64]) -> Result<EstimatedTruth, LearningError> {
    Ok(estimate_from_plugin(&learning.snapshot()?, probs).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Finite(f64),
    /// Ineligible for the weighted-rate argmin (an infinite weight).
    Excluded,
}

impl Weight {
    pub fn value(&self) -> f64 {
        match self {
            Weight::Finite(w) => *w,
            Weight::Excluded => f64::INFINITY,
        }
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self, Weight::Excluded)
    }

    fn finite_or_excluded(w: f64) -> Self {
        if w.is_finite() {
            Weight::Finite(w)
        } else {
            Weight::Excluded
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightVariant {
    /// Balance weights on `Ξ`; the MPB's adversarial pairs are excluded.
    Standard,
    /// Favorable-set accuracy weights on `Ξ ∪ Ξ^adv`.
    Acc,
    /// False-negative weights on `Ξ ∪ Ξ^adv`.
    Fn,
    /// All ones on `Ξ ∪ Ξ^adv` (C-OCBA).
    Unit,
}

impl WeightVariant {
    /// Whether the global balance sum keeps the MPB's term.
    pub fn global_sum_excludes_mpb(&self) -> bool {
        matches!(self, WeightVariant::Standard)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    k: usize,
    n_params: usize,
    entries: Vec<Weight>,
}

impl WeightMatrix {
    #[inline]
    pub fn get(&self, i: usize, b: usize) -> Weight {
        self.entries[i * self.n_params + b]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn eligible(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_params).flat_map(move |b| {
            (0..self.k).filter_map(move |i| match self.get(i, b) {
                Weight::Finite(w) => Some((i, b, w)),
                Weight::Excluded => None,
            })
        })
    }

    /// Excluded entries are written as `inf`.
    pub fn to_csv(&self) -> String {
        matrix_csv(self.k, self.n_params, |i, b| match self.get(i, b) {
            Weight::Finite(w) => w.to_string(),
            Weight::Excluded => "inf".to_string(),
        })
    }
}

/// Balance weight of `(i, θ_b) ∈ Ξ`:
/// `max{min(min_j d_j, d_i/2)/p_b, 1}` on the MPB's favorable set and
/// `max{d_i/p_b, 1}` elsewhere.
fn balance_weight(est: &EstimatedTruth, probs: &[f64], min_gap: f64, i: usize, b: usize) -> f64 {
    let d_i = est.gaps[i];
    let raw = if est.fav_set[b] {
        min_gap.min(d_i / 2.0) / probs[b]
    } else {
        d_i / probs[b]
    };
    raw.max(1.0)
}

/// Weight of one pair under `variant`; `min_gap` is [`EstimatedTruth::min_gap`].
#[inline]
pub fn weight_entry(
    est: &EstimatedTruth,
    probs: &[f64],
    min_gap: f64,
    variant: WeightVariant,
    i: usize,
    b: usize,
) -> Weight {
    if i == est.cond_opt[b] {
        Weight::Excluded
    } else if est.in_xi_adv(i, b) {
        match variant {
            WeightVariant::Standard => Weight::Excluded,
            _ => Weight::Finite(1.0),
        }
    } else {
        // (i, θ_b) ∈ Ξ_n
        match variant {
            WeightVariant::Unit => Weight::Finite(1.0),
            WeightVariant::Acc if est.fav_set[b] => Weight::Finite(1.0),
            _ => Weight::finite_or_excluded(balance_weight(est, probs, min_gap, i, b)),
        }
    }
}

pub fn weights(est: &EstimatedTruth, probs: &[f64], variant: WeightVariant) -> WeightMatrix {
    let k = est.k();
    let n_params = est.n_params();
    let min_gap = est.min_gap();
    let mut entries = Vec::with_capacity(k * n_params);
    for i in 0..k {
        for b in 0..n_params {
            entries.push(weight_entry(est, probs, min_gap, variant, i, b));
        }
    }
    WeightMatrix {
        k,
        n_params,
        entries,
    }
}

pub fn weights_standard(est: &EstimatedTruth, probs: &[f64]) -> WeightMatrix {
    weights(est, probs, WeightVariant::Standard)
}

pub fn weights_acc(est: &EstimatedTruth, probs: &[f64]) -> WeightMatrix {
    weights(est, probs, WeightVariant::Acc)
}

pub fn weights_fn(est: &EstimatedTruth, probs: &[f64]) -> WeightMatrix {
    weights(est, probs, WeightVariant::Fn)
}

/// Pair minimizing `W_i(θ_b) G_i(θ_b)` over non-excluded entries; ties go to
/// the lexicographically smallest `(b, i)`.
pub fn argmin_weighted_rate(w: &WeightMatrix, g: &RateMatrix) -> Result<(usize, usize), RatesError> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, b, weight) in w.eligible() {
        let product = weight * g.get(i, b);
        if best.is_none_or(|(_, _, p)| product < p) {
            best = Some((i, b, product));
        }
    }
    best.map(|(i, b, _)| (i, b)).ok_or(RatesError::AllExcluded)
}

/// `(N_{i^b}/λ_{i^b})² - Σ_{j ∈ S} (N_j/λ_j)²` for one column, where `S`
/// drops the conditional optimum and, when `exclude_mpb`, also the MPB.
/// `counts[j]` and `variances[j]` (= `λ_j²`) are indexed by solution. A
/// negative gap means the conditional optimum is under-sampled.
pub fn global_balance_gap(
    counts: &[f64],
    variances: &[f64],
    cond_opt: usize,
    mpb: usize,
    exclude_mpb: bool,
) -> f64 {
    column_balance_gap(
        counts.iter().copied().zip(variances.iter().copied()),
        cond_opt,
        mpb,
        exclude_mpb,
    )
}

pub(crate) fn column_balance_gap(
    column: impl Iterator<Item = (f64, f64)>,
    cond_opt: usize,
    mpb: usize,
    exclude_mpb: bool,
) -> f64 {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (j, (n, var)) in column.enumerate() {
        let term = n * n / var;
        if j == cond_opt {
            lhs = term;
        } else if !(exclude_mpb && j == mpb) {
            rhs += term;
        }
    }
    lhs - rhs
}

fn matrix_csv(k: usize, n_params: usize, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::from("solution");
    for b in 0..n_params {
        let _ = write!(out, ",theta_{}", b + 1);
    }
    out.push('\n');
    for i in 0..k {
        let _ = write!(out, "{}", i + 1);
        for b in 0..n_params {
            out.push(',');
            out.push_str(&cell(i, b));
        }
        out.push('\n');
    }
    out
}
