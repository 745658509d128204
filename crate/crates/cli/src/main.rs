use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use mpb_core::harness::{default_checkpoints, emit_csv, macro_experiment, FixedInstance, HarnessError, MetricsTable};
use mpb_core::market::{
    average_best, benchmark_portfolios, generate_utility_scenarios, golden_mean_sales, preference_from_means,
    sales_table_csv, worst_case_best, MarketProblem, UtilityScenario, UtilityScenarioFile, DEFAULT_CONSUMERS,
    DEFAULT_SCENARIOS, PORTFOLIO_RECIPES,
};
use mpb_core::oracle::{check_optimality, solve_balance, solve_balance_subgradient, Allocation, OracleError, StaticProblem};
use mpb_core::problem::generate_from_spec;
use mpb_core::rng::from_seed;
use mpb_core::{ProblemInstance, RunConfig, SamplerKind, Scenario, ScenarioSpec, VarianceMode, WeightVariant};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NON_CONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("residuals exceed tolerance {0}")]
    VerifyFailed(f64),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NonConvergence(_) => EXIT_NON_CONVERGENCE,
            CliError::Io { .. } => EXIT_IO,
            CliError::VerifyFailed(_) => EXIT_VERIFY_FAILED,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mpb", version, about = "Most-probable-best selection under input uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic instance and write it as JSON.
    Generate(GenerateArgs),
    /// Macro-replication experiment; writes the metrics CSV.
    Run(RunArgs),
    /// Optimal static allocation of an instance.
    SolveAlloc(SolveArgs),
    /// Check an allocation against the optimality conditions.
    VerifyAlloc(VerifyArgs),
    /// Utility scenarios and mean sales of the portfolio benchmark.
    Market(MarketArgs),
    /// Print a metrics CSV as gnuplot data blocks.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VarianceFlag {
    Known,
    Ng,
}

impl From<VarianceFlag> for VarianceMode {
    fn from(v: VarianceFlag) -> Self {
        match v {
            VarianceFlag::Known => VarianceMode::KnownVariance,
            VarianceFlag::Ng => VarianceMode::NormalGamma,
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Synthetic scenario name, or `market` for the portfolio benchmark.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "alg1,alg2,alg3,alg4,ea,cocba")]
    samplers: String,
    #[arg(long, default_value_t = 100)]
    macros: u64,
    #[arg(long, default_value_t = 10_000)]
    budget: u64,
    /// Default 5, or 10 for the market.
    #[arg(long)]
    n0: Option<u64>,
    /// Default 1, or 10 for the market.
    #[arg(long)]
    batch: Option<usize>,
    /// Default known, or ng for the market.
    #[arg(long, value_enum)]
    variance_mode: Option<VarianceFlag>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Output directory; the CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Market only: utility-scenario file (generated from --seed otherwise).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Market only: replications per pair used to estimate the true means.
    #[arg(long, default_value_t = 2_000)]
    truth_reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantFlag {
    Standard,
    Acc,
    Fn,
}

impl From<VariantFlag> for WeightVariant {
    fn from(v: VariantFlag) -> Self {
        match v {
            VariantFlag::Standard => WeightVariant::Standard,
            VariantFlag::Acc => WeightVariant::Acc,
            VariantFlag::Fn => WeightVariant::Fn,
        }
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    variant: VariantFlag,
    /// Residual tolerance beyond which the solve counts as not converged.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Accepted for symmetry with other commands; the solver is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `allocation.csv` and `residuals.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    alloc: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    variant: VariantFlag,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Output directory for `residuals.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MarketArgs {
    /// Analyze the bundled published mean-sales table instead of simulating.
    #[arg(long, conflicts_with_all = ["scenarios", "seed"])]
    golden: bool,
    /// Utility-scenario file to load instead of generating one.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Seed for generating utility scenarios and simulating sales.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-scenarios", default_value_t = DEFAULT_SCENARIOS)]
    n_scenarios: usize,
    #[arg(long, default_value_t = DEFAULT_CONSUMERS)]
    consumers: usize,
    /// Replications per (portfolio, scenario) pair.
    #[arg(long, default_value_t = 1_000)]
    reps: usize,
    /// Output directory for `scenarios.json` and `mean_sales.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse::<Scenario>().map_err(|e| e.to_string())
}

fn echo(config: serde_json::Value) {
    eprintln!("config: {config}");
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `text` to `dir/name`, or to stdout without a directory.
fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            ensure_dir(dir)?;
            write(&dir.join(name), text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_instance(path: &Path) -> Result<ProblemInstance, CliError> {
    ProblemInstance::from_json(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    echo(json!({"command": "generate", "scenario": args.scenario.name(), "seed": args.seed, "out": args.out}));
    let inst = generate_from_spec(ScenarioSpec {
        scenario: args.scenario,
        seed: args.seed,
    });
    let text = inst.to_json() + "\n";
    match &args.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scenarios(path: Option<&Path>, seed: u64, n_scenarios: usize, consumers: usize) -> Result<Vec<UtilityScenario>, CliError> {
    match path {
        Some(p) => UtilityScenarioFile::from_json(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => {
            if n_scenarios == 0 || consumers == 0 {
                return Err(CliError::Usage("need at least one scenario and one consumer".into()));
            }
            Ok(generate_utility_scenarios(n_scenarios, consumers, &mut from_seed(seed)))
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let market = args.scenario.eq_ignore_ascii_case("market");
    let kinds = SamplerKind::parse_list(&args.samplers).map_err(|e| CliError::Usage(e.to_string()))?;
    let (n0, batch, mode) = if market {
        (args.n0.unwrap_or(10), args.batch.unwrap_or(10), args.variance_mode.unwrap_or(VarianceFlag::Ng))
    } else {
        (args.n0.unwrap_or(5), args.batch.unwrap_or(1), args.variance_mode.unwrap_or(VarianceFlag::Known))
    };
    let mut config = RunConfig::new(n0, args.budget);
    config.batch_size = batch;
    config.variance_mode = mode.into();
    config.seed = args.seed;

    let table = if market {
        let scenarios = load_scenarios(args.scenarios.as_deref(), args.seed, DEFAULT_SCENARIOS, DEFAULT_CONSUMERS)?;
        let problem = MarketProblem::new(&benchmark_portfolios(), &scenarios).map_err(|e| CliError::Usage(e.to_string()))?;
        let (k, n_params) = (mpb_core::samplers::Simulator::k(&problem), scenarios.len());
        finish_config(&mut config, k, n_params)?;
        echo_run(&args, &kinds, &config);
        let sales = problem.estimate_mean_sales(args.truth_reps.max(1), &mut from_seed(args.seed ^ 0x6d61_726b));
        let probs = vec![1.0 / n_params as f64; n_params];
        let truth = MarketProblem::truth_from_sales(&sales, &probs);
        let source = FixedInstance {
            label: "market".to_string(),
            sim: problem,
            truth,
        };
        macro_experiment(&source, &kinds, args.macros, &config, args.workers)?
    } else {
        let scenario = parse_scenario(&args.scenario).map_err(CliError::Usage)?;
        finish_config(&mut config, Scenario::K, Scenario::B)?;
        echo_run(&args, &kinds, &config);
        macro_experiment(&scenario, &kinds, args.macros, &config, args.workers)?
    };
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            emit_csv(&table, &dir.join("metrics.csv"))?;
            Ok(())
        }
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn finish_config(config: &mut RunConfig, k: usize, n_params: usize) -> Result<(), CliError> {
    if config.budget <= config.initial_budget(k, n_params) {
        return Err(CliError::Usage(format!(
            "budget {} must exceed n0*k*B = {}",
            config.budget,
            config.initial_budget(k, n_params)
        )));
    }
    config.checkpoints = default_checkpoints(config, k, n_params);
    config.validate(k, n_params).map_err(|e| CliError::Usage(e.to_string()))
}

fn echo_run(args: &RunArgs, kinds: &[SamplerKind], config: &RunConfig) {
    echo(json!({
        "command": "run",
        "scenario": args.scenario.to_ascii_lowercase(),
        "samplers": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "macros": args.macros,
        "workers": args.workers,
        "out": args.out,
        "scenarios": args.scenarios,
        "truth_reps": args.truth_reps,
        "run_config": config,
    }));
}

fn static_problem(path: &Path) -> Result<StaticProblem, CliError> {
    Ok(StaticProblem::from_instance(&load_instance(path)?))
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::NonConvergence(m) => CliError::NonConvergence(m),
        other => CliError::Usage(other.to_string()),
    }
}

fn cmd_solve_alloc(args: SolveArgs) -> Result<(), CliError> {
    echo(json!({
        "command": "solve-alloc",
        "instance": args.instance,
        "variant": format!("{:?}", args.variant).to_lowercase(),
        "tol": args.tol,
        "out": args.out,
    }));
    let problem = static_problem(&args.instance)?;
    let variant = args.variant.into();
    let solution = match solve_balance(&problem, variant) {
        Ok(s) => s,
        Err(OracleError::NonConvergence(msg)) => {
            if let Ok(sub) = solve_balance_subgradient(&problem, variant, 20_000, 0.05) {
                if let Ok(report) = check_optimality(&problem, &sub.best.alloc, variant) {
                    eprint!("best residuals (subgradient):\n{}", report.to_csv());
                }
            }
            return Err(CliError::NonConvergence(msg));
        }
        Err(e) => return Err(oracle_error(e)),
    };
    let report = check_optimality(&problem, &solution.alloc, variant).map_err(oracle_error)?;
    let dir = args.out.as_deref();
    emit(dir, "allocation.csv", &solution.alloc.to_csv())?;
    emit(dir, "residuals.csv", &report.to_csv())?;
    if !report.within(args.tol) {
        eprint!("residuals:\n{}", report.to_csv());
        return Err(CliError::NonConvergence(format!("residuals exceed {}", args.tol)));
    }
    Ok(())
}

fn cmd_verify_alloc(args: VerifyArgs) -> Result<(), CliError> {
    echo(json!({
        "command": "verify-alloc",
        "instance": args.instance,
        "alloc": args.alloc,
        "variant": format!("{:?}", args.variant).to_lowercase(),
        "tol": args.tol,
        "out": args.out,
    }));
    let problem = static_problem(&args.instance)?;
    let alloc = Allocation::from_csv(&read(&args.alloc)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.alloc.display())))?;
    let report = check_optimality(&problem, &alloc, args.variant.into()).map_err(oracle_error)?;
    emit(args.out.as_deref(), "residuals.csv", &report.to_csv())?;
    if report.within(args.tol) {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(args.tol))
    }
}

fn preference_report(sales: &[Vec<f64>]) -> String {
    let n = sales.len();
    let pref = preference_from_means(sales, &vec![1.0 / n as f64; n]);
    let (robust, worst_row) = worst_case_best(sales);
    let mut out = String::from("portfolio,description,preference\n");
    for (i, p) in pref.pref.iter().enumerate() {
        let desc = PORTFOLIO_RECIPES.get(i).map_or(String::new(), |r| r.description());
        out.push_str(&format!("{},{desc},{p}\n", i + 1));
    }
    out.push_str(&format!("# mpb,{}{}\n", pref.mpb + 1, if pref.mpb_tie { " (tied)" } else { "" }));
    out.push_str(&format!("# average_best,{}\n", average_best(sales) + 1));
    out.push_str(&format!("# worst_case_best,{} (scenario {})\n", robust + 1, worst_row + 1));
    if !pref.row_ties.is_empty() {
        let rows: Vec<String> = pref.row_ties.iter().map(|b| (b + 1).to_string()).collect();
        out.push_str(&format!("# tied_scenarios,{}\n", rows.join(" ")));
    }
    out
}

fn cmd_market(args: MarketArgs) -> Result<(), CliError> {
    echo(json!({
        "command": "market",
        "golden": args.golden,
        "scenarios": args.scenarios,
        "seed": args.seed,
        "n_scenarios": args.n_scenarios,
        "consumers": args.consumers,
        "reps": args.reps,
        "out": args.out,
    }));
    let dir = args.out.as_deref();
    if args.golden {
        return emit(dir, "preference.csv", &preference_report(&golden_mean_sales()));
    }
    let seed = args
        .seed
        .ok_or_else(|| CliError::Usage("market needs --seed (or --golden)".into()))?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let scenarios = load_scenarios(args.scenarios.as_deref(), seed, args.n_scenarios, args.consumers)?;
    let problem = MarketProblem::new(&benchmark_portfolios(), &scenarios).map_err(|e| CliError::Usage(e.to_string()))?;
    // the scenario stream is separate from the sales stream
    let sales = problem.estimate_mean_sales(args.reps, &mut from_seed(seed ^ 0x5a1e_5a1e));
    if let Some(dir) = dir {
        ensure_dir(dir)?;
        write(&dir.join("scenarios.json"), &(UtilityScenarioFile::from_scenarios(&scenarios).to_json() + "\n"))?;
        write(&dir.join("mean_sales.csv"), &sales_table_csv(&sales))?;
    }
    emit(dir, "preference.csv", &preference_report(&sales))
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    echo(json!({"command": "report", "metrics": args.metrics, "out": args.out}));
    let table = MetricsTable::from_csv(&read(&args.metrics)?)?;
    let text = table.gnuplot_columns();
    match &args.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::SolveAlloc(a) => cmd_solve_alloc(a),
        Command::VerifyAlloc(a) => cmd_verify_alloc(a),
        Command::Market(a) => cmd_market(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
