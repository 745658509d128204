//! Test-side reference implementations, written from the definitions and
//! kept independent of the library code they check.

#![allow(dead_code)]

use mpb_core::oracle::StaticProblem;
use mpb_core::rng::StreamRng;
use mpb_core::{RateMatrix, TruthSummary, WeightVariant};
use rand::Rng;

/// Conditional optima, preference probabilities and MPB of a `k × B` means
/// matrix (smaller is better, lowest index on ties).
pub struct RefTruth {
    pub cond_opt: Vec<usize>,
    pub pref: Vec<f64>,
    pub mpb: usize,
}

pub fn ref_truth(means: &[Vec<f64>], probs: &[f64]) -> RefTruth {
    let k = means.len();
    let cond_opt: Vec<usize> = (0..probs.len())
        .map(|b| {
            let mut best = 0;
            for i in 1..k {
                if means[i][b] < means[best][b] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut pref = vec![0.0; k];
    for (b, &i) in cond_opt.iter().enumerate() {
        pref[i] += probs[b];
    }
    let mut mpb = 0;
    for i in 1..k {
        if pref[i] > pref[mpb] {
            mpb = i;
        }
    }
    RefTruth { cond_opt, pref, mpb }
}

/// Weight of `(i, θ_b)`, `None` when excluded.
pub fn ref_weight(t: &RefTruth, probs: &[f64], variant: WeightVariant, i: usize, b: usize) -> Option<f64> {
    if i == t.cond_opt[b] {
        return None;
    }
    let favorable = t.cond_opt[b] == t.mpb;
    if i == t.mpb {
        return match variant {
            WeightVariant::Standard => None,
            _ => Some(1.0),
        };
    }
    if variant == WeightVariant::Unit || (variant == WeightVariant::Acc && favorable) {
        return Some(1.0);
    }
    if probs[b] == 0.0 {
        return None;
    }
    let gap = |j: usize| t.pref[t.mpb] - t.pref[j];
    let min_gap = (0..t.pref.len()).filter(|&j| j != t.mpb).map(gap).fold(f64::INFINITY, f64::min);
    let raw = if favorable {
        min_gap.min(gap(i) / 2.0) / probs[b]
    } else {
        gap(i) / probs[b]
    };
    Some(raw.max(1.0))
}

pub fn ref_rate(delta: f64, var_i: f64, var_r: f64, a_i: f64, a_r: f64) -> f64 {
    if a_i == 0.0 || a_r == 0.0 {
        0.0
    } else {
        delta * delta / (2.0 * (var_i / a_i + var_r / a_r))
    }
}

/// `min W·G` over eligible pairs at the true means for allocation `alloc`.
pub fn ref_objective(
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
    probs: &[f64],
    alloc: &[Vec<f64>],
    variant: WeightVariant,
) -> f64 {
    let t = ref_truth(means, probs);
    let mut best = f64::INFINITY;
    for b in 0..probs.len() {
        let r = t.cond_opt[b];
        for i in 0..means.len() {
            if let Some(w) = ref_weight(&t, probs, variant, i, b) {
                let g = ref_rate(means[i][b] - means[r][b], vars[i][b], vars[r][b], alloc[i][b], alloc[r][b]);
                best = best.min(w * g);
            }
        }
    }
    best
}

fn unflatten(x: &[f64], n_params: usize) -> Vec<Vec<f64>> {
    x.chunks(n_params).map(<[f64]>::to_vec).collect()
}

/// Compositions of `total` into `parts` nonnegative integers.
fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(total);
        visit(prefix);
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, visit);
        prefix.pop();
    }
}

/// Random orthonormal basis of the zero-sum subspace of `R^dim`.
fn tangent_basis(rng: &mut StreamRng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim - 1);
    while basis.len() < dim - 1 {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = v.iter().sum::<f64>() / dim as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        for u in &basis {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Maximizes the objective over the simplex: a full lattice with spacing
/// `1/resolution`, then zoomed local grids of `5^(dim-1)` points spanning
/// `±2` steps along a randomly rotated basis of the simplex's tangent space.
/// A grid that fails to improve counts as a miss; `patience` consecutive
/// misses halve the spacing, and the search ends after `halvings` halvings.
pub fn grid_search(
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
    probs: &[f64],
    variant: WeightVariant,
    resolution: usize,
    halvings: usize,
) -> (f64, Vec<f64>) {
    const REACH: i32 = 2;
    let patience = 4;
    let mut rng = mpb_core::rng::from_seed(0);
    let n_params = probs.len();
    let dim = means.len() * n_params;
    let eval = |x: &[f64]| ref_objective(means, vars, probs, &unflatten(x, n_params), variant);
    let mut best = (f64::NEG_INFINITY, vec![0.0; dim]);
    compositions(resolution, dim, &mut Vec::new(), &mut |c| {
        let x: Vec<f64> = c.iter().map(|&v| v as f64 / resolution as f64).collect();
        let f = eval(&x);
        if f > best.0 {
            best = (f, x);
        }
    });
    let mut step = 1.0 / resolution as f64 / 2.0;
    let free = dim - 1;
    let (mut halved, mut misses) = (0, 0);
    while halved < halvings {
        let basis = tangent_basis(&mut rng, dim);
        let center = best.1.clone();
        let before = best.0;
        let mut offsets = vec![-REACH; free];
        let mut x = vec![0.0; dim];
        loop {
            x.copy_from_slice(&center);
            for (o, u) in offsets.iter().zip(&basis) {
                let t = f64::from(*o) * step;
                x.iter_mut().zip(u).for_each(|(xi, ui)| *xi += t * ui);
            }
            if x.iter().all(|v| *v >= 0.0) {
                let f = eval(&x);
                if f > best.0 {
                    best = (f, x.clone());
                }
            }
            let mut d = 0;
            while d < free {
                offsets[d] += 1;
                if offsets[d] <= REACH {
                    break;
                }
                offsets[d] = -REACH;
                d += 1;
            }
            if d == free {
                break;
            }
        }
        if best.0 > before {
            misses = 0;
        } else {
            misses += 1;
            if misses == patience {
                misses = 0;
                step /= 2.0;
                halved += 1;
            }
        }
    }
    best
}

/// `min_{M : d_j(M) ≤ 0} Σ_{b : M(b) ≠ i^b} G_{M(b)}(θ_b)` by enumerating
/// all `k^B` mappings.
pub fn brute_force_ldr(cond_opt: &[usize], mpb: usize, probs: &[f64], g: &RateMatrix, k: usize, j: usize) -> f64 {
    let n_params = cond_opt.len();
    let total = k.pow(n_params as u32);
    let mut best = f64::INFINITY;
    for code in 0..total {
        let mut c = code;
        let mut d = 0.0;
        let mut rate = 0.0;
        for b in 0..n_params {
            let i = c % k;
            c /= k;
            if i == mpb {
                d += probs[b];
            }
            if i == j {
                d -= probs[b];
            }
            if i != cond_opt[b] {
                rate += g.get(i, b);
            }
        }
        if d <= 1e-12 {
            best = best.min(rate);
        }
    }
    best
}

/// Random instance with a unique MPB and distinct column minima: random
/// conditional optima, Dirichlet-like probabilities, means 0 on the optimum
/// and in `(0.5, 3)` elsewhere.
pub fn random_unique_truth(rng: &mut StreamRng, k: usize, n_params: usize) -> (TruthSummary, Vec<f64>, Vec<Vec<f64>>) {
    loop {
        let raw: Vec<f64> = (0..n_params).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / sum).collect();
        let opt: Vec<usize> = (0..n_params).map(|_| rng.random_range(0..k)).collect();
        let means: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..n_params)
                    .map(|b| if opt[b] == i { 0.0 } else { rng.random_range(0.5..3.0) })
                    .collect()
            })
            .collect();
        let truth = TruthSummary::from_means(&means, &probs);
        if truth.is_unique() {
            return (truth, probs, means);
        }
    }
}

/// Random positive rates off the conditional optima.
pub fn random_rates(rng: &mut StreamRng, truth: &TruthSummary) -> RateMatrix {
    let (k, n_params) = (truth.k(), truth.n_params());
    let mut values = vec![0.0; k * n_params];
    for i in 0..k {
        for b in 0..n_params {
            if truth.cond_opt[b] != i {
                values[i * n_params + b] = rng.random_range(0.01..2.0);
            }
        }
    }
    RateMatrix::from_values(k, n_params, values)
}

/// Fixed `3 × 2` instances with a unique MPB.
pub fn battery_3x2() -> Vec<StaticProblem> {
    let cases: [([[f64; 2]; 3], [[f64; 2]; 3], [f64; 2]); 4] = [
        ([[0.0, 1.0], [1.0, 0.0], [2.0, 1.5]], [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], [0.6, 0.4]),
        ([[0.0, 0.0], [0.5, 1.0], [1.5, 0.4]], [[1.0, 4.0], [2.0, 1.0], [0.5, 1.5]], [0.5, 0.5]),
        ([[1.0, 0.3], [0.2, 0.0], [0.0, 2.0]], [[1.0, 2.0], [3.0, 1.0], [1.0, 1.0]], [0.35, 0.65]),
        ([[0.0, 0.8], [0.7, 0.0], [0.4, 1.1]], [[2.0, 1.0], [1.0, 0.5], [1.0, 2.0]], [0.7, 0.3]),
    ];
    cases
        .iter()
        .map(|(m, v, p)| {
            StaticProblem::new(
                m.iter().map(|r| r.to_vec()).collect(),
                v.iter().map(|r| r.to_vec()).collect(),
                p.to_vec(),
            )
            .expect("valid battery instance")
        })
        .collect()
}
