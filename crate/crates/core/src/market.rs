//! Product-portfolio benchmark: 243 five-feature products, multinomial-logit
//! consumers facing random choice sets, and expected-sales simulation for
//! nine candidate portfolios under sampled utility scenarios.
//!
//! The ranking-and-selection core minimizes, so [`MarketProblem`] reports
//! negated sales. Everything else in this module uses the natural sign.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::TruthSummary;
use crate::samplers::Simulator;

pub const FEATURES: usize = 5;
pub const LEVELS: u8 = 3;
pub const ATTRIBUTES: usize = 16;
pub const PORTFOLIO_SIZE: usize = 40;
/// Mean number of products a consumer sees.
pub const CHOICE_SET_MEAN: f64 = 4.0;
pub const DEFAULT_CONSUMERS: usize = 20;
pub const DEFAULT_SCENARIOS: usize = 50;
/// Prior mean of the transformed utility vector.
pub const B0: [f64; ATTRIBUTES] = [
    -1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -3.0, 0.0, 3.0, -4.0, 0.0, 4.0, -5.0, 0.0, 5.0, 0.0,
];
/// Standard deviation of each transformed utility coordinate.
pub const BETA_SD: f64 = 0.1;

const GOLDEN_TABLE: &str = include_str!("../data/market_mean_sales.csv");

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("feature levels must be in 1..=3, got {0:?}")]
    BadLevels([u8; FEATURES]),
    #[error("a portfolio holds exactly {PORTFOLIO_SIZE} products, got {0}")]
    PortfolioSize(usize),
    #[error("invalid utility scenarios: {0}")]
    Scenarios(String),
    #[error("mean-sales table: {0}")]
    Table(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Product {
    pub levels: [u8; FEATURES],
}

impl Product {
    pub fn new(levels: [u8; FEATURES]) -> Result<Self, MarketError> {
        if levels.iter().any(|&l| !(1..=LEVELS).contains(&l)) {
            return Err(MarketError::BadLevels(levels));
        }
        Ok(Product { levels })
    }

    /// All 3^5 products.
    pub fn all() -> Vec<Product> {
        (0..3usize.pow(FEATURES as u32))
            .map(|mut code| {
                let mut levels = [0u8; FEATURES];
                for slot in levels.iter_mut().rev() {
                    *slot = (code % 3) as u8 + 1;
                    code /= 3;
                }
                Product { levels }
            })
            .collect()
    }

    /// `Σ_m (50 ℓ_m m + 10 ℓ_m²)` in whole currency units.
    pub fn price_units(&self) -> u32 {
        self.levels
            .iter()
            .zip(1u32..)
            .map(|(&l, m)| {
                let l = u32::from(l);
                50 * l * m + 10 * l * l
            })
            .sum()
    }

    pub fn price(&self) -> f64 {
        f64::from(self.price_units())
    }

    /// Level indicators scaled by 0.1, then the price scaled by -1/1000.
    pub fn attributes(&self) -> [f64; ATTRIBUTES] {
        let mut x = [0.0; ATTRIBUTES];
        for (m, &l) in self.levels.iter().enumerate() {
            x[3 * m + usize::from(l) - 1] = 0.1;
        }
        x[ATTRIBUTES - 1] = -self.price() / 1000.0;
        x
    }

    /// Utility at the prior mean, in thousandths: feature level 1, 2, 3 of
    /// feature `m` contributes `-m, 0, m` tenths, minus the price.
    pub fn prior_utility_milli(&self) -> i64 {
        let features: i64 = self
            .levels
            .iter()
            .zip(1i64..)
            .map(|(&l, m)| (i64::from(l) - 2) * m)
            .sum();
        100 * features - i64::from(self.price_units())
    }

    pub fn prior_utility(&self) -> f64 {
        self.prior_utility_milli() as f64 / 1000.0
    }
}

pub fn product_price(p: &Product) -> f64 {
    p.price()
}

/// Products by prior utility, highest first. Equal utilities are ordered by
/// higher price, then by levels in descending lexicographic order.
pub fn ranked_products() -> Vec<Product> {
    let mut all = Product::all();
    all.sort_by(|a, b| {
        b.prior_utility_milli()
            .cmp(&a.prior_utility_milli())
            .then(b.price_units().cmp(&a.price_units()))
            .then(b.levels.cmp(&a.levels))
    });
    all
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portfolio {
    slots: Vec<Product>,
}

impl Portfolio {
    pub fn new(slots: Vec<Product>) -> Result<Self, MarketError> {
        if slots.len() != PORTFOLIO_SIZE {
            return Err(MarketError::PortfolioSize(slots.len()));
        }
        Ok(Portfolio { slots })
    }

    pub fn slots(&self) -> &[Product] {
        &self.slots
    }
}

/// Table entry: the top `top` ranked products, each stocked `copies` times,
/// followed by ranks `top + 1 ..= tail_end` once each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortfolioRecipe {
    pub top: usize,
    pub copies: usize,
    pub tail_end: usize,
}

pub const PORTFOLIO_RECIPES: [PortfolioRecipe; 9] = [
    PortfolioRecipe { top: 40, copies: 1, tail_end: 40 },
    PortfolioRecipe { top: 20, copies: 2, tail_end: 20 },
    PortfolioRecipe { top: 10, copies: 4, tail_end: 10 },
    PortfolioRecipe { top: 5, copies: 8, tail_end: 5 },
    PortfolioRecipe { top: 4, copies: 10, tail_end: 4 },
    PortfolioRecipe { top: 5, copies: 3, tail_end: 30 },
    PortfolioRecipe { top: 10, copies: 2, tail_end: 30 },
    PortfolioRecipe { top: 10, copies: 3, tail_end: 20 },
    PortfolioRecipe { top: 4, copies: 6, tail_end: 20 },
];

impl PortfolioRecipe {
    pub fn description(&self) -> String {
        match (self.copies, self.tail_end > self.top) {
            (1, _) => format!("Top {}", self.top),
            (c, false) => format!("Top {}x{c}", self.top),
            (c, true) => format!("Top {}x{c} + Top {}-{}", self.top, self.top + 1, self.tail_end),
        }
    }

    pub fn build(&self, ranking: &[Product]) -> Result<Portfolio, MarketError> {
        let mut slots = Vec::with_capacity(PORTFOLIO_SIZE);
        for p in &ranking[..self.top] {
            slots.extend(std::iter::repeat_n(*p, self.copies));
        }
        slots.extend_from_slice(&ranking[self.top..self.tail_end]);
        Portfolio::new(slots)
    }
}

/// The nine benchmark portfolios in table order.
pub fn benchmark_portfolios() -> Vec<Portfolio> {
    let ranking = ranked_products();
    PORTFOLIO_RECIPES
        .iter()
        .map(|r| r.build(&ranking).expect("recipes fill 40 slots"))
        .collect()
}

/// `M ~ Poisson(4)` slots (capped at 40) drawn without replacement.
pub fn choice_set<R: Rng + ?Sized>(rng: &mut R) -> Vec<usize> {
    let poisson = Poisson::new(CHOICE_SET_MEAN).expect("positive rate");
    let m = (poisson.sample(rng) as usize).min(PORTFOLIO_SIZE);
    index::sample(rng, PORTFOLIO_SIZE, m).into_vec()
}

/// `1 − 1/(1 + Σ_j exp(u_j))` for product utilities `u_j`, via log-sum-exp.
pub fn purchase_probability_from_utilities(utilities: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = utilities.clone().into_iter().fold(0.0f64, f64::max);
    let sum = (-max).exp() + utilities.into_iter().map(|u| (u - max).exp()).sum::<f64>();
    let lse = max + sum.ln();
    -(-lse).exp_m1()
}

/// Purchase probability of a consumer with utility vector `beta` facing
/// `products` plus the no-purchase option.
pub fn purchase_probability(products: &[[f64; ATTRIBUTES]], beta: &[f64; ATTRIBUTES]) -> f64 {
    purchase_probability_from_utilities(products.iter().map(|x| dot(beta, x)))
}

fn dot(a: &[f64; ATTRIBUTES], b: &[f64; ATTRIBUTES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One utility vector per consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScenario {
    pub betas: Vec<[f64; ATTRIBUTES]>,
}

impl UtilityScenario {
    pub fn consumers(&self) -> usize {
        self.betas.len()
    }
}

/// Expected sales: purchase probabilities summed over the scenario's
/// consumers, each facing an independent choice set.
pub fn simulate_sales<R: Rng + ?Sized>(portfolio: &Portfolio, scenario: &UtilityScenario, rng: &mut R) -> f64 {
    let attrs: Vec<[f64; ATTRIBUTES]> = portfolio.slots.iter().map(Product::attributes).collect();
    scenario
        .betas
        .iter()
        .map(|beta| {
            let set = choice_set(rng);
            purchase_probability_from_utilities(set.iter().map(|&s| dot(beta, &attrs[s])))
        })
        .sum()
}

/// Draws `T(β) ~ N(B0, 0.1² I)` and returns `β` with its last coordinate
/// exponentiated.
pub fn draw_beta<R: Rng + ?Sized>(rng: &mut R) -> [f64; ATTRIBUTES] {
    let mut beta = [0.0; ATTRIBUTES];
    for (slot, mean) in beta.iter_mut().zip(B0) {
        *slot = Normal::new(mean, BETA_SD).expect("positive sd").sample(rng);
    }
    beta[ATTRIBUTES - 1] = beta[ATTRIBUTES - 1].exp();
    beta
}

pub fn generate_utility_scenarios<R: Rng + ?Sized>(n_scenarios: usize, consumers: usize, rng: &mut R) -> Vec<UtilityScenario> {
    (0..n_scenarios)
        .map(|_| UtilityScenario {
            betas: (0..consumers).map(|_| draw_beta(rng)).collect(),
        })
        .collect()
}

/// On-disk form of a scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScenarioFile {
    #[serde(rename = "B")]
    pub n_scenarios: usize,
    #[serde(rename = "N")]
    pub consumers: usize,
    pub betas: Vec<Vec<[f64; ATTRIBUTES]>>,
}

impl UtilityScenarioFile {
    pub fn from_scenarios(scenarios: &[UtilityScenario]) -> Self {
        UtilityScenarioFile {
            n_scenarios: scenarios.len(),
            consumers: scenarios.first().map_or(0, UtilityScenario::consumers),
            betas: scenarios.iter().map(|s| s.betas.clone()).collect(),
        }
    }

    pub fn into_scenarios(self) -> Result<Vec<UtilityScenario>, MarketError> {
        if self.n_scenarios == 0 || self.betas.len() != self.n_scenarios {
            return Err(MarketError::Scenarios(format!(
                "expected {} scenarios, found {}",
                self.n_scenarios,
                self.betas.len()
            )));
        }
        for (b, set) in self.betas.iter().enumerate() {
            if set.len() != self.consumers || set.is_empty() {
                return Err(MarketError::Scenarios(format!("scenario {} needs {} consumers", b + 1, self.consumers)));
            }
            if set.iter().flatten().any(|v| !v.is_finite()) || set.iter().any(|beta| beta[ATTRIBUTES - 1] <= 0.0) {
                return Err(MarketError::Scenarios(format!(
                    "scenario {} has a non-finite entry or a non-positive price coefficient",
                    b + 1
                )));
            }
        }
        Ok(self.betas.into_iter().map(|betas| UtilityScenario { betas }).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario file serializes")
    }

    pub fn from_json(text: &str) -> Result<Vec<UtilityScenario>, MarketError> {
        serde_json::from_str::<UtilityScenarioFile>(text)?.into_scenarios()
    }
}

/// Preference analysis of a `B × k` mean-sales table (larger is better).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPreference {
    pub pref: Vec<f64>,
    /// Best portfolio per scenario (lowest index on ties).
    pub row_best: Vec<usize>,
    /// Scenarios whose best portfolio is tied.
    pub row_ties: Vec<usize>,
    pub mpb: usize,
    /// Another portfolio shares the largest preference probability.
    pub mpb_tie: bool,
}

pub fn preference_from_means(sales: &[Vec<f64>], probs: &[f64]) -> MarketPreference {
    let negated: Vec<Vec<f64>> = transpose(sales).into_iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let truth = TruthSummary::from_means(&negated, probs);
    MarketPreference {
        row_ties: (0..probs.len()).filter(|&b| !truth.unique_inner[b]).collect(),
        row_best: truth.cond_opt,
        mpb: truth.mpb,
        mpb_tie: !truth.unique_outer,
        pref: truth.pref_probs,
    }
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols).map(|j| m.iter().map(|row| row[j]).collect()).collect()
}

/// Average over scenarios of each portfolio's mean sales.
pub fn column_averages(sales: &[Vec<f64>]) -> Vec<f64> {
    transpose(sales)
        .iter()
        .map(|col| col.iter().sum::<f64>() / col.len() as f64)
        .collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Portfolio with the largest average sales.
pub fn average_best(sales: &[Vec<f64>]) -> usize {
    argmax(&column_averages(sales))
}

/// Portfolio with the largest worst-case sales, and the worst scenario of
/// that portfolio.
pub fn worst_case_best(sales: &[Vec<f64>]) -> (usize, usize) {
    let cols = transpose(sales);
    let worst: Vec<(usize, f64)> = cols
        .iter()
        .map(|col| {
            let b = (0..col.len()).fold(0, |best, b| if col[b] < col[best] { b } else { best });
            (b, col[b])
        })
        .collect();
    let i = argmax(&worst.iter().map(|w| w.1).collect::<Vec<_>>());
    (i, worst[i].0)
}

/// The published `50 × 9` mean-sales table (scenarios by portfolios).
pub fn golden_mean_sales() -> Vec<Vec<f64>> {
    parse_sales_table(GOLDEN_TABLE).expect("bundled table parses")
}

/// Reads a CSV with a header row and a leading label column.
pub fn parse_sales_table(text: &str) -> Result<Vec<Vec<f64>>, MarketError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| MarketError::Table(e.to_string()))?;
        let row = record
            .iter()
            .skip(1)
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MarketError::Table(e.to_string()))?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(MarketError::Table("rows must be non-empty and equally long".into()));
    }
    Ok(rows)
}

pub fn sales_table_csv(sales: &[Vec<f64>]) -> String {
    let width = sales.first().map_or(0, Vec::len);
    let mut out = String::from("scenario");
    for i in 1..=width {
        out.push_str(&format!(",portfolio_{i}"));
    }
    out.push('\n');
    for (b, row) in sales.iter().enumerate() {
        out.push_str(&(b + 1).to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Portfolios as solutions and utility scenarios as input parameters, with
/// uniform scenario probabilities. Outputs are negated sales.
#[derive(Debug, Clone)]
pub struct MarketProblem {
    n_portfolios: usize,
    n_scenarios: usize,
    consumers: usize,
    probs: Vec<f64>,
    /// `β_n · x_slot` indexed `[(i·B + b)·N + n][slot]`, flattened.
    utilities: Arc<Vec<f64>>,
}

impl MarketProblem {
    pub fn new(portfolios: &[Portfolio], scenarios: &[UtilityScenario]) -> Result<Self, MarketError> {
        let consumers = scenarios.first().map_or(0, UtilityScenario::consumers);
        if portfolios.len() < 2 || scenarios.is_empty() || consumers == 0 {
            return Err(MarketError::Scenarios("need at least two portfolios and one non-empty scenario".into()));
        }
        if scenarios.iter().any(|s| s.consumers() != consumers) {
            return Err(MarketError::Scenarios("every scenario needs the same number of consumers".into()));
        }
        let mut utilities = Vec::with_capacity(portfolios.len() * scenarios.len() * consumers * PORTFOLIO_SIZE);
        for p in portfolios {
            let attrs: Vec<[f64; ATTRIBUTES]> = p.slots.iter().map(Product::attributes).collect();
            for s in scenarios {
                for beta in &s.betas {
                    utilities.extend(attrs.iter().map(|x| dot(beta, x)));
                }
            }
        }
        Ok(MarketProblem {
            n_portfolios: portfolios.len(),
            n_scenarios: scenarios.len(),
            consumers,
            probs: vec![1.0 / scenarios.len() as f64; scenarios.len()],
            utilities: Arc::new(utilities),
        })
    }

    /// Sales of portfolio `i` under scenario `b` (natural sign).
    pub fn sales<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64 {
        let base = (i * self.n_scenarios + b) * self.consumers;
        (0..self.consumers)
            .map(|n| {
                let u = &self.utilities[(base + n) * PORTFOLIO_SIZE..(base + n + 1) * PORTFOLIO_SIZE];
                let set = choice_set(rng);
                purchase_probability_from_utilities(set.iter().map(|&s| u[s]))
            })
            .sum()
    }

    /// Monte Carlo mean sales, `B × k`, from `reps` replications per pair.
    pub fn estimate_mean_sales<R: Rng + ?Sized>(&self, reps: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.n_scenarios)
            .map(|b| {
                (0..self.n_portfolios)
                    .map(|i| (0..reps).map(|_| self.sales(i, b, rng)).sum::<f64>() / reps as f64)
                    .collect()
            })
            .collect()
    }

    /// Ground truth under the minimization convention from a `B × k`
    /// mean-sales table.
    pub fn truth_from_sales(sales: &[Vec<f64>], probs: &[f64]) -> TruthSummary {
        let negated: Vec<Vec<f64>> = transpose(sales).into_iter().map(|row| row.iter().map(|v| -v).collect()).collect();
        TruthSummary::from_means(&negated, probs)
    }
}

impl Simulator for MarketProblem {
    fn k(&self) -> usize {
        self.n_portfolios
    }

    fn n_params(&self) -> usize {
        self.n_scenarios
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn sample<R: Rng + ?Sized>(&self, i: usize, b: usize, rng: &mut R) -> f64 {
        -self.sales(i, b, rng)
    }
}
