use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdd::bound::Census;
use gdd::check::{run_suite, Suite};
use gdd::decode::Score;
use gdd::io::{self, TraceFormat};
use gdd::oracle::{exact_weighted_logz, DEFAULT_LIMIT};
use gdd::solver::{Decoding, WeightInit};
use gdd::{DiscreteModel, Error, InferenceQuery, OptimizerConfig};
use serde::Serialize;

/// Upper bounds and decodings for sum, max and marginal MAP inference.
#[derive(Parser)]
#[command(name = "gdd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the bound on a UAI model and write a result JSON.
    Solve(SolveArgs),
    /// Run randomized property suites and print a JSON report.
    Check(CheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sum,
    Max,
    Mmap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Wmb,
    Uniform,
}

#[derive(Args)]
struct SolveArgs {
    /// Model file in UAI MARKOV format.
    model: PathBuf,
    #[arg(long, value_enum, default_value = "mmap")]
    mode: Mode,
    /// Query file `k i_1 … i_k` naming the max variables (marginal MAP).
    #[arg(long)]
    query: Option<PathBuf>,
    /// Fraction of variables maximized when no query file is given.
    #[arg(long, default_value_t = 0.5)]
    max_frac: f64,
    /// Seed for the random choice of max variables.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long, default_value_t = 5)]
    inner_grad_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    armijo_c: f64,
    #[arg(long, default_value_t = 0.5)]
    backtrack_factor: f64,
    #[arg(long, default_value_t = 20)]
    max_backtracks: usize,
    #[arg(long, default_value_t = 1.0)]
    initial_step: f64,
    #[arg(long, default_value_t = 1e-8)]
    weight_floor: f64,
    #[arg(long, value_enum, default_value = "wmb")]
    weight_init: Init,
    /// Largest joint state count for which decodings are scored exactly.
    #[arg(long, default_value_t = 1 << 20)]
    score_limit: u64,
    /// Update each color class in parallel.
    #[arg(long)]
    parallel: bool,
    /// Trace output file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Result JSON file; printed to stdout when absent.
    #[arg(long)]
    result: Option<PathBuf>,
    /// Also compute the exact value by enumeration; fails on large models.
    #[arg(long)]
    oracle: bool,
    /// Include wall time in the result JSON.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Suites to run; all of them when omitted.
    #[arg(value_parser = parse_suite)]
    suites: Vec<Suite>,
    /// Trials per suite; each suite has its own default.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn default_trials(suite: Suite) -> usize {
    match suite {
        Suite::Holder => 1000,
        Suite::Gradients => 50,
        Suite::Monotone | Suite::Anytime => 100,
        Suite::Kkt => 10,
        Suite::Parallel => 20,
    }
}

#[derive(Serialize)]
struct SolveResult {
    mode: &'static str,
    max_set: Vec<usize>,
    #[serde(with = "io::extended_f64")]
    bound: f64,
    decoded_config: Vec<usize>,
    score: Score,
    best: Option<Decoding>,
    sweeps: usize,
    converged: bool,
    census: Census,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn context(what: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| match e {
        Error::Capacity { .. } => Failure {
            code: 2,
            message: format!("{}: {e}", what.display()),
        },
        _ => Failure::input(format!("{}: {e}", what.display())),
    }
}

fn build_query(args: &SolveArgs, model: &DiscreteModel) -> Result<InferenceQuery, Failure> {
    let n = model.num_vars();
    if let Some(path) = &args.query {
        if args.mode != Mode::Mmap {
            return Err(Failure::input("--query only applies to --mode mmap"));
        }
        let text = std::fs::read_to_string(path).map_err(|e| context(path)(e.into()))?;
        return io::parse_query(&text, model).map_err(context(path));
    }
    match args.mode {
        Mode::Sum => Ok(InferenceQuery::sum(n)),
        Mode::Max => Ok(InferenceQuery::max(n)),
        Mode::Mmap => InferenceQuery::random_marginal_map(n, args.max_frac, args.seed)
            .map_err(|e| Failure::input(format!("--max-frac: {e}"))),
    }
}

fn config(args: &SolveArgs, parallel: bool) -> OptimizerConfig {
    OptimizerConfig {
        max_sweeps: args.max_sweeps,
        rel_tol: args.rel_tol,
        inner_grad_steps: args.inner_grad_steps,
        armijo_c: args.armijo_c,
        backtrack_factor: args.backtrack_factor,
        max_backtracks: args.max_backtracks,
        initial_step: args.initial_step,
        weight_floor: args.weight_floor,
        parallel,
        weight_init: match args.weight_init {
            Init::Wmb => WeightInit::Wmb,
            Init::Uniform => WeightInit::Uniform,
        },
        score_limit: args.score_limit,
    }
}

/// Worker count from `POWERSUM_THREADS`; `Some(0)` means sequential.
fn thread_cap() -> Result<Option<usize>, Failure> {
    match std::env::var("POWERSUM_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::input(format!("POWERSUM_THREADS: expected a count, got {v:?}"))),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let start = Instant::now();
    let model = io::read_uai(&args.model).map_err(context(&args.model))?;
    let query = build_query(&args, &model)?;
    if args.oracle && model.joint_states() > DEFAULT_LIMIT as f64 {
        return Err(context(&args.model)(Error::Capacity {
            states: model.joint_states(),
            limit: DEFAULT_LIMIT,
        }));
    }
    let threads = thread_cap()?;
    let cfg = config(&args, args.parallel && threads != Some(0));
    cfg.validate().map_err(|e| Failure::input(e.to_string()))?;

    let out = match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::input(format!("POWERSUM_THREADS: {e}")))?
            .install(|| gdd::run(&model, &query, &cfg)),
        _ => gdd::run(&model, &query, &cfg),
    }
    .map_err(|e| Failure::input(e.to_string()))?;

    let exact = if args.oracle {
        Some(exact_weighted_logz(&model, &query, out.state.order(), DEFAULT_LIMIT).map_err(context(&args.model))?)
    } else {
        None
    };
    if let Some(path) = &args.trace {
        let format = match args.format {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        };
        let text = io::write_trace(&out.trace, format).map_err(|e| Failure::input(e.to_string()))?;
        write_file(path, &text)?;
    }

    let last = out.trace.last().expect("trace holds the initial state");
    let result = SolveResult {
        mode: match args.mode {
            Mode::Sum => "sum",
            Mode::Max => "max",
            Mode::Mmap => "mmap",
        },
        max_set: query.max_set(),
        bound: out.bound(),
        decoded_config: last.decoded_config.clone(),
        score: last.decoded_score,
        best: out.best.clone(),
        sweeps: out.sweeps,
        converged: out.converged,
        census: out.census,
        exact,
        wall_time_s: args.timing.then(|| start.elapsed().as_secs_f64()),
    };
    let json = serde_json::to_string_pretty(&result).expect("result serializes") + "\n";
    match &args.result {
        Some(path) => write_file(path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let suites = if args.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suites
    };
    let mut reports = Vec::new();
    for suite in suites {
        let trials = args.trials.unwrap_or_else(|| default_trials(suite));
        let report = run_suite(suite, args.seed, trials).map_err(|e| Failure::input(format!("{suite}: {e}")))?;
        reports.push(report);
    }
    println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.suite.to_string()).collect();
        Err(Failure::input(format!("failed suites: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Check(args) => check(args),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gdd: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
