//! Desk-scale static analysis: false-selection mappings, exact and relaxed
//! large-deviation rates, optimality residuals and optimal static allocations.

use thiserror::Error;

use crate::problem::{ProblemInstance, TruthSummary, PREF_TIE_TOL};
use crate::rates::{weights, EstimatedTruth, RateMatrix, Weight, WeightMatrix, WeightVariant};

/// Default limit on the number of mappings `k^B` enumerated by the exact oracle.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumerating {count} mappings exceeds the cap of {cap}")]
    EnumerationTooLarge { count: f64, cap: u64 },
    #[error("the most probable best is not unique")]
    NotUnique,
    #[error("solution {j} is the most probable best")]
    MpbIndex { j: usize },
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("solution {i} has zero mean gap to the conditional optimum at parameter {b}")]
    DegenerateGap { i: usize, b: usize },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Means, variances and probabilities of a static problem; everything the
/// oracle needs and nothing about noise shape.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticProblem {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl StaticProblem {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self, OracleError> {
        let b = probs.len();
        if means.is_empty()
            || means.len() != variances.len()
            || means.iter().chain(&variances).any(|row| row.len() != b)
        {
            return Err(OracleError::Shape("means and variances must both be k x B".into()));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(OracleError::Shape("variances must be positive".into()));
        }
        Ok(StaticProblem {
            means,
            variances,
            probs,
        })
    }

    pub fn from_instance(inst: &ProblemInstance) -> Self {
        StaticProblem {
            means: inst.means().to_vec(),
            variances: inst.variances(),
            probs: inst.probs().to_vec(),
        }
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn n_params(&self) -> usize {
        self.probs.len()
    }

    pub fn truth(&self) -> TruthSummary {
        TruthSummary::from_means(&self.means, &self.probs)
    }

    /// Rates at the true means under `alloc`.
    pub fn rates(&self, truth: &TruthSummary, alloc: &Allocation) -> RateMatrix {
        RateMatrix::from_allocation(&self.means, &self.variances, &alloc.values, &truth.cond_opt)
    }
}

/// `k × B` matrix of nonnegative fractions summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    values: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let b = values.first().map_or(0, Vec::len);
        if b == 0 || values.iter().any(|row| row.len() != b) {
            return Err(OracleError::InvalidAllocation("not a rectangular k x B matrix".into()));
        }
        if values.iter().flatten().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(OracleError::InvalidAllocation("entries must be finite and nonnegative".into()));
        }
        let sum: f64 = values.iter().flatten().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(OracleError::InvalidAllocation(format!("entries sum to {sum}, not 1")));
        }
        Ok(Allocation { values })
    }

    /// Rescales a nonnegative matrix onto the simplex.
    pub fn normalized(mut values: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let sum: f64 = values.iter().flatten().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(OracleError::InvalidAllocation(format!("entries sum to {sum}")));
        }
        values.iter_mut().flatten().for_each(|a| *a /= sum);
        Self::new(values)
    }

    pub fn uniform(k: usize, n_params: usize) -> Self {
        let a = 1.0 / (k * n_params) as f64;
        Allocation {
            values: vec![vec![a; n_params]; k],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, b: usize) -> f64 {
        self.values[i][b]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn n_params(&self) -> usize {
        self.values[0].len()
    }

    /// Header `solution,theta_1,..,theta_B`, one row per solution (1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("solution");
        for b in 0..self.n_params() {
            out.push_str(&format!(",theta_{}", b + 1));
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for a in row {
                out.push(',');
                out.push_str(&a.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, OracleError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| OracleError::InvalidAllocation(e.to_string()))?;
            let row = record
                .iter()
                .skip(1)
                .map(|cell| cell.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| OracleError::InvalidAllocation(e.to_string()))?;
            values.push(row);
        }
        Self::new(values)
    }
}

/// A mapping `M` stored by the solution it selects at each parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingMatrix {
    assignment: Vec<usize>,
}

impl MappingMatrix {
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self, OracleError> {
        if assignment.iter().any(|&i| i >= k) {
            return Err(OracleError::Shape("mapping selects a solution outside 0..k".into()));
        }
        Ok(MappingMatrix { assignment })
    }

    /// The true mapping `M*` selecting every conditional optimum.
    pub fn truth(truth: &TruthSummary) -> Self {
        MappingMatrix {
            assignment: truth.cond_opt.clone(),
        }
    }

    pub fn selected(&self, b: usize) -> usize {
        self.assignment[b]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Binary `k × B` form with one 1 per column.
    pub fn to_binary(&self, k: usize) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; self.assignment.len()]; k];
        for (b, &i) in self.assignment.iter().enumerate() {
            m[i][b] = 1;
        }
        m
    }

    /// Misspecified pairs `I(M)`: selected pairs that are not conditional optima.
    pub fn misspecified(&self, truth: &TruthSummary) -> Vec<(usize, usize)> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(b, &i)| i != truth.cond_opt[b])
            .map(|(b, &i)| (i, b))
            .collect()
    }
}

/// `d_j(M)` together with `I(M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingEval {
    pub d: f64,
    pub misspecified: Vec<(usize, usize)>,
}

/// `d_j(M) = Σ_b p_b m_{i*,b} − Σ_b p_b m_{j,b}` under the true MPB `i*`.
pub fn d_of_mapping(truth: &TruthSummary, probs: &[f64], m: &MappingMatrix, j: usize) -> MappingEval {
    MappingEval {
        d: mapping_gap(truth.mpb, probs, &m.assignment, j),
        misspecified: m.misspecified(truth),
    }
}

fn mapping_gap(mpb: usize, probs: &[f64], assignment: &[usize], j: usize) -> f64 {
    assignment
        .iter()
        .zip(probs)
        .map(|(&i, p)| {
            if i == mpb {
                *p
            } else if i == j {
                -*p
            } else {
                0.0
            }
        })
        .sum()
}

fn check_enumerable(k: usize, n_params: usize, cap: u64) -> Result<(), OracleError> {
    let count = (k as f64).powi(n_params as i32);
    if count > cap as f64 {
        return Err(OracleError::EnumerationTooLarge { count, cap });
    }
    Ok(())
}

fn check_j(truth: &TruthSummary, j: usize) -> Result<(), OracleError> {
    if !truth.is_unique() {
        return Err(OracleError::NotUnique);
    }
    if j == truth.mpb || j >= truth.k() {
        return Err(OracleError::MpbIndex { j });
    }
    Ok(())
}

/// Calls `visit` on every assignment in `{0..k}^B` (odometer order, last
/// parameter fastest).
fn for_each_mapping(k: usize, n_params: usize, mut visit: impl FnMut(&[usize])) {
    let mut assignment = vec![0usize; n_params];
    loop {
        visit(&assignment);
        let mut pos = n_params;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

fn misspecified_rate(truth: &TruthSummary, g: &RateMatrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter(|&(b, &i)| i != truth.cond_opt[b])
        .map(|(b, &i)| g.get(i, b))
        .sum()
}

/// Brute-force `LDR_{j,i*} = min_{M : d_j(M) ≤ 0} Σ_{(i,θ_b) ∈ I(M)} G_i(θ_b)`.
pub fn exact_ldr_j(
    truth: &TruthSummary,
    probs: &[f64],
    g: &RateMatrix,
    j: usize,
    cap: u64,
) -> Result<f64, OracleError> {
    check_j(truth, j)?;
    check_enumerable(truth.k(), truth.n_params(), cap)?;
    let mut best = f64::INFINITY;
    for_each_mapping(truth.k(), truth.n_params(), |assignment| {
        if mapping_gap(truth.mpb, probs, assignment, j) <= PREF_TIE_TOL {
            best = best.min(misspecified_rate(truth, g, assignment));
        }
    });
    Ok(best)
}

/// Knapsack data for one competitor `j`: pairs with `i ≠ i^b` in `(b, i)`
/// order, the clipped contributions `v_j⁺` and the capacity `d_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackVectors {
    pub pairs: Vec<(usize, usize)>,
    pub v: Vec<f64>,
    pub d_j: f64,
}

impl KnapsackVectors {
    pub fn value(&self, i: usize, b: usize) -> f64 {
        self.pairs
            .iter()
            .position(|&p| p == (i, b))
            .map_or(0.0, |pos| self.v[pos])
    }
}

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// `v_j[(i,θ_b)] = p_b (1{j=i} − 1{j=i^b} − 1{i*=i} + 1{i*=i^b})`, unclipped.
fn raw_contribution(truth: &TruthSummary, probs: &[f64], j: usize, i: usize, b: usize) -> f64 {
    let ib = truth.cond_opt[b];
    let star = truth.mpb;
    probs[b] * (indicator(j == i) - indicator(j == ib) - indicator(star == i) + indicator(star == ib))
}

pub fn knapsack_vectors(truth: &TruthSummary, probs: &[f64], j: usize) -> KnapsackVectors {
    let mut pairs = Vec::new();
    let mut v = Vec::new();
    for b in 0..truth.n_params() {
        for i in 0..truth.k() {
            if i != truth.cond_opt[b] {
                pairs.push((i, b));
                v.push(raw_contribution(truth, probs, j, i, b).max(0.0));
            }
        }
    }
    KnapsackVectors {
        pairs,
        v,
        d_j: truth.gaps[j],
    }
}

/// Minimum rate over mappings satisfying the knapsack constraint
/// `d_j − Σ v_j⁺ · m ≤ 0`, where `m` indicates `I(M)`. Mappings are still
/// enumerated, so this checks that the clipped linear constraint describes
/// the same minimum as `d_j(M) ≤ 0`.
pub fn knapsack_ldr_j(
    truth: &TruthSummary,
    probs: &[f64],
    g: &RateMatrix,
    j: usize,
    cap: u64,
) -> Result<f64, OracleError> {
    check_j(truth, j)?;
    check_enumerable(truth.k(), truth.n_params(), cap)?;
    let d_j = truth.gaps[j];
    let mut best = f64::INFINITY;
    for_each_mapping(truth.k(), truth.n_params(), |assignment| {
        let covered: f64 = assignment
            .iter()
            .enumerate()
            .filter(|&(b, &i)| i != truth.cond_opt[b])
            .map(|(b, &i)| raw_contribution(truth, probs, j, i, b).max(0.0))
            .sum();
        if d_j - covered <= PREF_TIE_TOL {
            best = best.min(misspecified_rate(truth, g, assignment));
        }
    });
    Ok(best)
}

/// `min_{(i,θ_b) ∈ Ξ} W_i(θ_b) G_i(θ_b)` with balance weights built on the
/// true quantities.
pub fn lower_bound_ldr(truth: &TruthSummary, probs: &[f64], g: &RateMatrix) -> Result<f64, OracleError> {
    if !truth.is_unique() {
        return Err(OracleError::NotUnique);
    }
    let w = weights(&EstimatedTruth::from_truth(truth), probs, WeightVariant::Standard);
    Ok(w.eligible()
        .map(|(i, b, weight)| weight * g.get(i, b))
        .fold(f64::INFINITY, f64::min))
}

/// Optimality residuals of a static allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityReport {
    /// `max_b |L_b − R_b| / max(L_b, R_b)` for the global balance condition.
    pub global: f64,
    /// `max |W_iG_i / (W_jG_j) − 1|` over eligible pairs.
    pub pairwise: f64,
    /// Largest `α_{i*}(θ_b)` on the MPB's adversarial set (Standard only).
    pub adversarial_mass: f64,
    /// `min W_iG_i` over eligible pairs.
    pub objective: f64,
}

impl OptimalityReport {
    pub fn max_residual(&self) -> f64 {
        self.global.max(self.pairwise).max(self.adversarial_mass)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }

    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nglobal,{}\npairwise,{}\nadversarial_mass,{}\nobjective,{}\n",
            self.global, self.pairwise, self.adversarial_mass, self.objective
        )
    }
}

fn true_weights(truth: &TruthSummary, probs: &[f64], variant: WeightVariant) -> WeightMatrix {
    weights(&EstimatedTruth::from_truth(truth), probs, variant)
}

/// `min W_iG_i(α)` over eligible pairs.
pub fn objective(problem: &StaticProblem, truth: &TruthSummary, alloc: &Allocation, variant: WeightVariant) -> f64 {
    let w = true_weights(truth, &problem.probs, variant);
    let g = problem.rates(truth, alloc);
    w.eligible()
        .map(|(i, b, weight)| weight * g.get(i, b))
        .fold(f64::INFINITY, f64::min)
}

pub fn check_optimality(
    problem: &StaticProblem,
    alloc: &Allocation,
    variant: WeightVariant,
) -> Result<OptimalityReport, OracleError> {
    if alloc.k() != problem.k() || alloc.n_params() != problem.n_params() {
        return Err(OracleError::Shape("allocation does not match the instance".into()));
    }
    let truth = problem.truth();
    if !truth.is_unique() {
        return Err(OracleError::NotUnique);
    }
    let w = true_weights(&truth, &problem.probs, variant);
    let g = problem.rates(&truth, alloc);
    let exclude_mpb = variant.global_sum_excludes_mpb();

    let mut global: f64 = 0.0;
    for b in 0..problem.n_params() {
        let r = truth.cond_opt[b];
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in 0..problem.k() {
            let term = alloc.get(i, b).powi(2) / problem.variances[i][b];
            if i == r {
                lhs = term;
            } else if !(exclude_mpb && i == truth.mpb) {
                rhs += term;
            }
        }
        let scale = lhs.max(rhs);
        if scale > 0.0 {
            global = global.max((lhs - rhs).abs() / scale);
        }
    }

    let products: Vec<f64> = w.eligible().map(|(i, b, weight)| weight * g.get(i, b)).collect();
    let lo = products.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = products.iter().copied().fold(0.0, f64::max);
    let pairwise = if products.is_empty() {
        0.0
    } else if lo > 0.0 {
        hi / lo - 1.0
    } else if hi > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };

    let adversarial_mass = if variant == WeightVariant::Standard {
        (0..problem.n_params())
            .filter(|&b| !truth.in_mpb_favorable(b))
            .map(|b| alloc.get(truth.mpb, b))
            .fold(0.0, f64::max)
    } else {
        0.0
    };

    Ok(OptimalityReport {
        global,
        pairwise,
        adversarial_mass,
        objective: if products.is_empty() { 0.0 } else { lo },
    })
}

/// Optimal static allocation and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceSolution {
    pub alloc: Allocation,
    pub objective: f64,
}

/// Eligible pairs of one column as `(i, c_i = W_i δ_i² / 2)`.
fn column_coefficients(
    problem: &StaticProblem,
    truth: &TruthSummary,
    w: &WeightMatrix,
    b: usize,
) -> Result<Vec<(usize, f64)>, OracleError> {
    let r = truth.cond_opt[b];
    let mut out = Vec::new();
    for i in 0..problem.k() {
        if let Weight::Finite(weight) = w.get(i, b) {
            let delta = problem.means[i][b] - problem.means[r][b];
            if delta == 0.0 {
                return Err(OracleError::DegenerateGap { i, b });
            }
            out.push((i, weight * delta * delta / 2.0));
        }
    }
    Ok(out)
}

/// Minimal column mass with `W_i G_i ≥ 1` for every eligible pair, as
/// `(α_ref, [(i, α_i)])`.
///
/// With `x = α_ref` fixed, the cheapest feasible `α_i` is
/// `λ_i² x / (c_i x − λ_ref²)`. The total `x + Σ α_i(x)` is convex on
/// `x > max_i λ_ref²/c_i`; its stationary point is the global balance
/// condition `(x/λ_ref)² = Σ (α_i/λ_i)²`, located by bisection.
fn solve_column(var_ref: f64, pairs: &[(usize, f64, f64)]) -> Result<(f64, Vec<(usize, f64)>), OracleError> {
    let alpha_i = |x: f64, c: f64, var_i: f64| var_i * x / (c * x - var_ref);
    let slope = |x: f64| {
        1.0 - pairs
            .iter()
            .map(|&(_, c, var_i)| var_i * var_ref / (c * x - var_ref).powi(2))
            .sum::<f64>()
    };
    let x_min = pairs
        .iter()
        .map(|&(_, c, _)| var_ref / c)
        .fold(0.0, f64::max);
    let mut lo = x_min;
    let mut hi = 2.0 * x_min;
    let mut expansions = 0;
    while slope(hi) <= 0.0 {
        hi = x_min + 2.0 * (hi - x_min);
        expansions += 1;
        if expansions > 200 {
            return Err(OracleError::NonConvergence("could not bracket a column optimum".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    if x <= x_min {
        return Err(OracleError::NonConvergence("column optimum collapsed onto its boundary".into()));
    }
    Ok((x, pairs.iter().map(|&(i, c, var_i)| (i, alpha_i(x, c, var_i))).collect()))
}

/// Allocation maximizing `min W_i G_i(α)` over the simplex.
///
/// The objective is homogeneous of degree one and each eligible pair only
/// involves its own column, so the problem is solved as
/// `min Σα s.t. W_i G_i(α) ≥ 1`, column by column, and rescaled; the optimal
/// value is the reciprocal of the unscaled total. Columns without eligible
/// pairs get no budget, which also pins `α_{i*}(θ_b) = 0` on the MPB's
/// adversarial set under the Standard weights.
pub fn solve_balance(problem: &StaticProblem, variant: WeightVariant) -> Result<BalanceSolution, OracleError> {
    let truth = problem.truth();
    if !truth.is_unique() {
        return Err(OracleError::NotUnique);
    }
    let w = true_weights(&truth, &problem.probs, variant);
    let mut values = vec![vec![0.0; problem.n_params()]; problem.k()];
    let mut total = 0.0;
    for b in 0..problem.n_params() {
        let coeffs = column_coefficients(problem, &truth, &w, b)?;
        if coeffs.is_empty() {
            continue;
        }
        let r = truth.cond_opt[b];
        let pairs: Vec<(usize, f64, f64)> = coeffs
            .iter()
            .map(|&(i, c)| (i, c, problem.variances[i][b]))
            .collect();
        let (x, alphas) = solve_column(problem.variances[r][b], &pairs)?;
        values[r][b] = x;
        total += x;
        for (i, a) in alphas {
            values[i][b] = a;
            total += a;
        }
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(OracleError::NonConvergence("no eligible pairs to allocate to".into()));
    }
    Ok(BalanceSolution {
        alloc: Allocation::normalized(values)?,
        objective: 1.0 / total,
    })
}

/// Result of the projected subgradient method.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientResult {
    pub best: BalanceSolution,
    /// Best objective seen after each iteration.
    pub history: Vec<f64>,
}

/// Euclidean projection of `y` onto `{x ≥ 0, Σx = 1}`.
fn project_simplex(y: &mut [f64]) {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (idx, u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (idx + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    y.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
}

/// Projected subgradient ascent on `min W_i G_i(α)` with step `step / √t`,
/// restricted to entries that affect the objective. The returned solution
/// is the best iterate, so `history` is non-decreasing.
pub fn solve_balance_subgradient(
    problem: &StaticProblem,
    variant: WeightVariant,
    iterations: usize,
    step: f64,
) -> Result<SubgradientResult, OracleError> {
    let truth = problem.truth();
    if !truth.is_unique() {
        return Err(OracleError::NotUnique);
    }
    let w = true_weights(&truth, &problem.probs, variant);
    let (k, n_params) = (problem.k(), problem.n_params());
    let mut free = vec![false; k * n_params];
    let mut eligible = Vec::new();
    for b in 0..n_params {
        for (i, c) in column_coefficients(problem, &truth, &w, b)? {
            free[i * n_params + b] = true;
            free[truth.cond_opt[b] * n_params + b] = true;
            eligible.push((i, b, c));
        }
    }
    let slots: Vec<usize> = (0..k * n_params).filter(|&s| free[s]).collect();
    if slots.is_empty() {
        return Err(OracleError::NonConvergence("no eligible pairs to allocate to".into()));
    }
    let var = |s: usize| problem.variances[s / n_params][s % n_params];
    let mut x = vec![1.0 / slots.len() as f64; slots.len()];
    let mut full = vec![0.0; k * n_params];
    let eval = |x: &[f64], full: &mut Vec<f64>| {
        full.iter_mut().for_each(|v| *v = 0.0);
        for (pos, &s) in slots.iter().enumerate() {
            full[s] = x[pos];
        }
        let mut best = (f64::INFINITY, 0usize);
        for (idx, &(i, b, c)) in eligible.iter().enumerate() {
            let r = truth.cond_opt[b];
            let (ai, ar) = (full[i * n_params + b], full[r * n_params + b]);
            let value = if ai > 0.0 && ar > 0.0 {
                c / (var(i * n_params + b) / ai + var(r * n_params + b) / ar)
            } else {
                0.0
            };
            if value < best.0 {
                best = (value, idx);
            }
        }
        best
    };
    let mut best_x = x.clone();
    let (mut best_val, _) = eval(&x, &mut full);
    let mut history = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let (_, active) = eval(&x, &mut full);
        let (i, b, c) = eligible[active];
        let r = truth.cond_opt[b];
        let (si, sr) = (i * n_params + b, r * n_params + b);
        let (ai, ar) = (full[si].max(1e-12), full[sr].max(1e-12));
        let denom = var(si) / ai + var(sr) / ar;
        let gi = c * var(si) / (ai * ai * denom * denom);
        let gr = c * var(sr) / (ar * ar * denom * denom);
        let norm = (gi * gi + gr * gr).sqrt();
        let scale = step / (t as f64).sqrt() / norm.max(1e-300);
        for (pos, &s) in slots.iter().enumerate() {
            if s == si {
                x[pos] += scale * gi;
            } else if s == sr {
                x[pos] += scale * gr;
            }
        }
        project_simplex(&mut x);
        let (value, _) = eval(&x, &mut full);
        if value > best_val {
            best_val = value;
            best_x.clone_from(&x);
        }
        history.push(best_val);
    }
    let mut values = vec![vec![0.0; n_params]; k];
    for (pos, &s) in slots.iter().enumerate() {
        values[s / n_params][s % n_params] = best_x[pos];
    }
    Ok(SubgradientResult {
        best: BalanceSolution {
            alloc: Allocation::normalized(values)?,
            objective: best_val,
        },
        history,
    })
}
