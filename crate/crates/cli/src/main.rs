//! `joinrl` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on usage or
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "joinrl", version, about = "Learned join ordering: data generation, training, evaluation and benchmarks")]
struct Cli {
    /// Worker threads for training and evaluation [default: available cores].
    #[arg(long, global = true, env = "JOINRL_JOBS")]
    jobs: Option<usize>,

    /// Directory for generated files and reports.
    #[arg(long, global = true, env = "JOINRL_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic catalog, workload, lookup cardinalities and split.
    Gen(GenArgs),
    /// Train one policy.
    Train(TrainArgs),
    /// Evaluate policies on a query set.
    Eval(EvalArgs),
    /// Compare policies, their ensemble and the DP baseline.
    Compare(EvalArgs),
    /// Measure planning latency per relation count.
    Latency(LatencyArgs),
    /// Plan queries with the dynamic-programming or exhaustive baselines.
    Dp(DpArgs),
    /// Summarize a cost report: statistics, outliers and table occurrences.
    Report(ReportArgs),
    /// Run a full experiment described by a TOML file.
    Experiment(ExperimentArgs),
}

/// Catalog, workload and query selection shared by most subcommands.
#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Catalog JSON file.
    #[arg(long)]
    catalog: PathBuf,
    /// Workload JSON file.
    #[arg(long)]
    workload: PathBuf,
    /// Lookup cardinality file; estimated cardinalities are used when absent.
    #[arg(long)]
    lookup: Option<PathBuf>,
    /// Split JSON file.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Fold of the split to use; without it every query is used.
    #[arg(long, requires = "split")]
    fold: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitMode {
    /// Random partition into k test sets.
    Random,
    /// Partition that keeps every table and predicate in each training set.
    Curated,
    /// Random folds with test sets padded to --test-size.
    Overlap,
    /// One curated fold with exactly --test-size test queries.
    Holdout,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    tables: usize,
    #[arg(long, default_value_t = 60)]
    queries: usize,
    /// Smallest query size [default: min(3, tables)].
    #[arg(long)]
    min_relations: Option<usize>,
    /// Largest query size [default: min(8, tables)].
    #[arg(long)]
    max_relations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write lookup cardinalities perturbed by a log-normal factor with this sigma.
    #[arg(long)]
    lookup_sigma: Option<f64>,
    /// Also write a split of the workload.
    #[arg(long, value_enum)]
    split: Option<SplitMode>,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    /// Test-set size for the overlap and holdout splits.
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct BoundArgs {
    /// Reward upper bound; calibrated from random episodes when absent.
    #[arg(long)]
    upper_bound: Option<f64>,
    /// Percentile of random-episode costs used as the calibrated upper bound.
    #[arg(long, default_value_t = 90.0)]
    calibrate_percentile: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Agent to train: dqn, ddqn or ppo.
    #[arg(long)]
    agent: Option<String>,
    /// Named hyper-parameter set [default: the agent's desk preset].
    #[arg(long)]
    preset: Option<String>,
    /// Hyper-parameter override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with agent, preset, seed, upper_bound and set; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    bound: BoundArgs,
    /// Policy file [default: <out-dir>/<agent>-seed<seed>.policy].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Policy files; planner ids are their file stems.
    #[arg(long = "policy", required = true, num_args = 1..)]
    policies: Vec<PathBuf>,
    /// Also evaluate the ensemble of all policies (always on for compare).
    #[arg(long)]
    ensemble: bool,
    /// Report file [default: <out-dir>/<command>.csv].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LatencyArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Policy files to time alongside the DP baseline.
    #[arg(long = "policy")]
    policies: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Skip the DP baseline.
    #[arg(long)]
    no_dp: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SearchSpace {
    /// Dynamic programming over left-deep plans.
    LeftDeep,
    /// Enumeration of every left-deep plan (up to 8 relations).
    ExhaustiveLeftDeep,
    /// Enumeration of every bushy plan (up to 7 relations).
    Bushy,
}

#[derive(Debug, Args)]
struct DpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SearchSpace::LeftDeep)]
    space: SearchSpace,
    /// Plan only this query.
    #[arg(long)]
    query: Option<String>,
    /// Allow cross products in the left-deep search.
    #[arg(long)]
    allow_cross: bool,
    /// Reward upper bound used for the reward column.
    #[arg(long, default_value_t = 1e13)]
    upper_bound: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Cost report CSV.
    input: PathBuf,
    /// Planner whose outliers feed the occurrence report.
    #[arg(long)]
    planner: Option<String>,
    /// Catalog, workload and split for the occurrence report.
    #[arg(long, requires_all = ["workload", "split", "planner"])]
    catalog: Option<PathBuf>,
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment TOML file.
    config: PathBuf,
    /// Overrides the file's master seed.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Overrides the file's ensemble setting.
    #[arg(long)]
    ensemble: Option<bool>,
}

/// Error raised for invalid command-line input; exits with code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_usage_error(e: &joinrl::Error) -> bool {
    use joinrl::Error as E;
    match e {
        E::Context { source, .. } => is_usage_error(source),
        E::Parse { .. }
        | E::Config(_)
        | E::Infeasible(_)
        | E::DuplicateName { .. }
        | E::InvalidStatistic(_)
        | E::UnknownTable(_)
        | E::UnknownColumn { .. }
        | E::InvalidQuery { .. }
        | E::TooManyRelations { .. } => true,
        _ => false,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<joinrl::Error>() {
            return if is_usage_error(err) { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = match cli.jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    let out = &cli.out_dir;
    match cli.command {
        Command::Gen(a) => commands::gen(&a, out),
        Command::Train(a) => commands::train(&a, out),
        Command::Eval(a) => commands::eval(&a, out, false),
        Command::Compare(a) => commands::eval(&a, out, true),
        Command::Latency(a) => commands::latency(&a, out),
        Command::Dp(a) => commands::dp(&a, out),
        Command::Report(a) => commands::report(&a, out),
        Command::Experiment(a) => commands::experiment(&a, out),
    }
}
