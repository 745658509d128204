//! Selection of the most probable best (MPB) in nested ranking-and-selection
//! problems under input uncertainty.
//!
//! A problem has `k` candidate solutions and a finite support of `B` input
//! parameters `θ_1..θ_B` with simplex weights `p_b`. The MPB is the solution
//! that is conditionally optimal (smallest mean) on the largest probability
//! mass of parameters. The crate provides:
//!
//! - [`problem`]: problem instances, ground truth, and the synthetic scenarios.
//! - [`learning`]: conjugate posterior statistics per solution-parameter pair.
//! - [`rates`]: large-deviation rate functions, balance weights and the
//!   weighted-rate sampling rule.
//! - [`oracle`]: desk-scale static-allocation oracles (mapping enumeration,
//!   knapsack relaxation, optimal balance allocations, KKT residuals).
//! - [`samplers`]: sequential sampling policies (Algorithms 1-4, equal
//!   allocation and C-OCBA).
//! - [`harness`]: macro-replication experiments and CSV output.
//! - [`market`]: the product-portfolio market simulation benchmark.
//!
//! Solutions and parameters are indexed from zero throughout the API.

pub mod harness;
pub mod learning;
pub mod market;
pub mod oracle;
pub mod problem;
pub mod rates;
pub mod rng;
pub mod samplers;

pub use learning::{LearningState, VarianceMode};
pub use problem::{NoiseKind, NoiseModel, ProblemInstance, Scenario, ScenarioSpec, TruthSummary};
pub use rates::{EstimatedTruth, RateMatrix, Weight, WeightMatrix, WeightVariant};
pub use samplers::{RunConfig, RunTrace, SamplerKind, Simulator};
