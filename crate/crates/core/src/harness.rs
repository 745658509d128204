//! Macro-replication experiments: run every sampler on independently drawn
//! instances, classify each checkpoint, and aggregate PFS, FNR and 1-ACC.

use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::problem::{generate_synthetic, ProblemInstance, Scenario, TruthSummary};
use crate::rng::{stream, tag_sampler, StreamRng, TAG_INSTANCE};
use crate::samplers::{log_checkpoints, run, CheckpointRecord, RunConfig, SamplerError, SamplerKind, Simulator};

/// Number of checkpoints in the default grid.
pub const DEFAULT_CHECKPOINTS: usize = 20;

pub const CSV_HEADER: [&str; 13] = [
    "scenario",
    "sampler",
    "budget",
    "macro_runs",
    "pfs",
    "pfs_se",
    "fnr_mean",
    "fnr_se",
    "one_minus_acc_mean",
    "one_minus_acc_se",
    "log10_pfs",
    "log10_fnr",
    "log10_one_minus_acc",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("macro run {run}, sampler {kind}: {source}")]
    Run {
        run: u64,
        kind: SamplerKind,
        source: SamplerError,
    },
    #[error("macro run {run}: the true most probable best is not unique")]
    NotUnique { run: u64 },
    #[error("need at least one macro run")]
    NoRuns,
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("metrics CSV: {0}")]
    Csv(String),
}

/// Outcome of one run at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunClassification {
    /// The estimated MPB is wrong or tied.
    pub fs: bool,
    pub fnr: f64,
    pub acc: f64,
    /// Correct MPB and exactly its favorable set.
    pub acc_event: bool,
    /// Correct MPB and a superset of its favorable set.
    pub fn_event: bool,
}

/// `FNR = P(Θ_{i*} ∩ (Θ_n^*)^c) / P(Θ_{i*})` and
/// `ACC = P(Θ_{i*} ∩ Θ_n^*) + P(Θ_{i*}^c ∩ (Θ_n^*)^c)`, where `Θ_n^*` is the
/// estimated favorable set of whatever the run selected.
pub fn classify(cp: &CheckpointRecord, truth: &TruthSummary, probs: &[f64]) -> RunClassification {
    let mut fav_mass = 0.0;
    let mut missed = 0.0;
    let mut agree = 0.0;
    let mut superset = true;
    let mut exact = true;
    for (b, &p) in probs.iter().enumerate() {
        let truly = truth.in_mpb_favorable(b);
        let est = cp.fav_set[b];
        if truly {
            fav_mass += p;
            if !est {
                missed += p;
                superset = false;
            }
        }
        if truly == est {
            agree += p;
        } else {
            exact = false;
        }
    }
    let fs = cp.tie || cp.mpb_hat != truth.mpb;
    RunClassification {
        fs,
        fnr: missed / fav_mass,
        acc: agree,
        acc_event: !fs && exact,
        fn_event: !fs && superset,
    }
}

/// Aggregated metrics for one `(scenario, sampler, checkpoint)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub sampler: String,
    pub budget: u64,
    pub macro_runs: u64,
    pub pfs: f64,
    pub pfs_se: f64,
    pub fnr_mean: f64,
    pub fnr_se: f64,
    pub one_minus_acc_mean: f64,
    pub one_minus_acc_se: f64,
}

impl MetricsRow {
    fn aggregate(scenario: &str, kind: SamplerKind, budget: u64, cells: &[RunClassification]) -> Self {
        let r = cells.len() as f64;
        let fs = cells.iter().filter(|c| c.fs).count() as f64;
        let pfs = fs / r;
        let fnr: Vec<f64> = cells.iter().map(|c| c.fnr).collect();
        let miss: Vec<f64> = cells.iter().map(|c| 1.0 - c.acc).collect();
        let (fnr_mean, fnr_se) = mean_se(&fnr);
        let (one_minus_acc_mean, one_minus_acc_se) = mean_se(&miss);
        MetricsRow {
            scenario: scenario.to_string(),
            sampler: kind.name().to_string(),
            budget,
            macro_runs: cells.len() as u64,
            pfs,
            pfs_se: (pfs * (1.0 - pfs) / r).sqrt(),
            fnr_mean,
            fnr_se,
            one_minus_acc_mean,
            one_minus_acc_se,
        }
    }
}

/// Sample mean and its standard error (`s/√R`, 0 for a single run).
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `log10(x)`, with 0 written as `-inf`.
pub fn log10_field(x: f64) -> String {
    if x <= 0.0 {
        "-inf".to_string()
    } else {
        x.log10().to_string()
    }
}

fn parse_field(s: &str) -> Result<f64, HarnessError> {
    s.trim().parse::<f64>().map_err(|e| HarnessError::Csv(format!("{s:?}: {e}")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("write to memory");
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.sampler.clone(),
                r.budget.to_string(),
                r.macro_runs.to_string(),
                r.pfs.to_string(),
                r.pfs_se.to_string(),
                r.fnr_mean.to_string(),
                r.fnr_se.to_string(),
                r.one_minus_acc_mean.to_string(),
                r.one_minus_acc_se.to_string(),
                log10_field(r.pfs),
                log10_field(r.fnr_mean),
                log10_field(r.one_minus_acc_mean),
            ])
            .expect("write to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| HarnessError::Csv(e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(HarnessError::Csv("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let rec = record.map_err(|e| HarnessError::Csv(e.to_string()))?;
            let int = |s: &str| s.trim().parse::<u64>().map_err(|e| HarnessError::Csv(format!("{s:?}: {e}")));
            rows.push(MetricsRow {
                scenario: rec[0].to_string(),
                sampler: rec[1].to_string(),
                budget: int(&rec[2])?,
                macro_runs: int(&rec[3])?,
                pfs: parse_field(&rec[4])?,
                pfs_se: parse_field(&rec[5])?,
                fnr_mean: parse_field(&rec[6])?,
                fnr_se: parse_field(&rec[7])?,
                one_minus_acc_mean: parse_field(&rec[8])?,
                one_minus_acc_se: parse_field(&rec[9])?,
            });
        }
        Ok(MetricsTable { rows })
    }

    /// Rows of one sampler in checkpoint order.
    pub fn sampler_rows<'a>(&'a self, sampler: &'a str) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows.iter().filter(move |r| r.sampler == sampler)
    }

    /// Row of `sampler` at its largest budget.
    pub fn final_row<'a>(&'a self, sampler: &'a str) -> Option<&'a MetricsRow> {
        self.sampler_rows(sampler).max_by_key(|r| r.budget)
    }

    /// Whitespace-separated blocks, one per scenario/sampler, with columns
    /// `budget log10_pfs log10_fnr log10_one_minus_acc`, separated by two
    /// blank lines so each block is a gnuplot data set.
    pub fn gnuplot_columns(&self) -> String {
        let mut out = String::new();
        let mut current: Option<(&str, &str)> = None;
        for r in &self.rows {
            let key = (r.scenario.as_str(), r.sampler.as_str());
            if current != Some(key) {
                if current.is_some() {
                    out.push_str("\n\n");
                }
                out.push_str(&format!("# {} {}\n# budget log10_pfs log10_fnr log10_one_minus_acc\n", key.0, key.1));
                current = Some(key);
            }
            out.push_str(&format!(
                "{} {} {} {}\n",
                r.budget,
                log10_field(r.pfs),
                log10_field(r.fnr_mean),
                log10_field(r.one_minus_acc_mean)
            ));
        }
        out
    }
}

/// Writes the table to `path`, replacing any existing file.
pub fn emit_csv(table: &MetricsTable, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, table.to_csv()).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Supplies the problem of each macro run.
pub trait InstanceSource: Sync {
    type Sim: Simulator + Send;

    /// Label written to the `scenario` column.
    fn label(&self) -> String;

    /// The instance of one macro run and its ground truth, drawn from the
    /// run's instance stream.
    fn instance(&self, rng: &mut StreamRng) -> (Self::Sim, TruthSummary);
}

impl InstanceSource for Scenario {
    type Sim = ProblemInstance;

    fn label(&self) -> String {
        self.name().to_string()
    }

    fn instance(&self, rng: &mut StreamRng) -> (ProblemInstance, TruthSummary) {
        let inst = generate_synthetic(*self, rng);
        let truth = inst.derive_truth();
        (inst, truth)
    }
}

/// The same fixed instance in every macro run.
#[derive(Debug, Clone)]
pub struct FixedInstance<S> {
    pub label: String,
    pub sim: S,
    pub truth: TruthSummary,
}

impl<S: Simulator + Clone + Send + Sync> InstanceSource for FixedInstance<S> {
    type Sim = S;

    fn label(&self) -> String {
        self.label.clone()
    }

    fn instance(&self, _rng: &mut StreamRng) -> (S, TruthSummary) {
        (self.sim.clone(), self.truth.clone())
    }
}

/// Stream tag of a sampler; fixed per kind so that the sampler list order
/// does not change results.
fn sampler_tag(kind: SamplerKind) -> u64 {
    let slot = SamplerKind::ALL.iter().position(|k| *k == kind).expect("kind listed in ALL");
    tag_sampler(slot)
}

fn one_macro_run<S: InstanceSource>(
    source: &S,
    kinds: &[SamplerKind],
    config: &RunConfig,
    run_idx: u64,
) -> Result<Vec<Vec<RunClassification>>, HarnessError> {
    let (sim, truth) = source.instance(&mut stream(config.seed, run_idx, TAG_INSTANCE));
    if !truth.is_unique() {
        return Err(HarnessError::NotUnique { run: run_idx });
    }
    kinds
        .iter()
        .map(|&kind| {
            let mut rng = stream(config.seed, run_idx, sampler_tag(kind));
            let trace = run(kind, &sim, config, &mut rng).map_err(|source| HarnessError::Run {
                run: run_idx,
                kind,
                source,
            })?;
            Ok(trace
                .checkpoints
                .iter()
                .map(|cp| classify(cp, &truth, sim.probs()))
                .collect())
        })
        .collect()
}

/// Runs `macros` independent repetitions on `workers` threads.
///
/// Every run draws its instance and sampler streams from
/// `(config.seed, run index)`, and results are reduced in run order, so the
/// table does not depend on `workers`.
pub fn macro_experiment<S: InstanceSource>(
    source: &S,
    kinds: &[SamplerKind],
    macros: u64,
    config: &RunConfig,
    workers: usize,
) -> Result<MetricsTable, HarnessError> {
    if macros == 0 {
        return Err(HarnessError::NoRuns);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let per_run: Vec<Vec<Vec<RunClassification>>> = pool.install(|| {
        (0..macros)
            .into_par_iter()
            .map(|r| one_macro_run(source, kinds, config, r))
            .collect::<Result<_, _>>()
    })?;

    let label = source.label();
    let mut rows = Vec::with_capacity(kinds.len() * config.checkpoints.len());
    let mut cells = Vec::with_capacity(per_run.len());
    for (slot, &kind) in kinds.iter().enumerate() {
        for (c, &budget) in config.checkpoints.iter().enumerate() {
            cells.clear();
            cells.extend(per_run.iter().map(|run| run[slot][c]));
            rows.push(MetricsRow::aggregate(&label, kind, budget, &cells));
        }
    }
    Ok(MetricsTable { rows })
}

/// Default grid: [`DEFAULT_CHECKPOINTS`] log-spaced budgets after initialization.
pub fn default_checkpoints(config: &RunConfig, k: usize, n_params: usize) -> Vec<u64> {
    log_checkpoints(config.initial_budget(k, n_params), config.budget, DEFAULT_CHECKPOINTS)
}
