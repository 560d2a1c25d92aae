use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use seqscreen::dictionary::DEFAULT_CHUNK_SIZE;
use seqscreen::sequence::support_of;
use seqscreen::{
    format, gen_synthetic, lambda_max, normalize_columns, run_benchmark, run_sequence, solve_lasso,
    BenchConfig, BenchReport, Dictionary, LassoProblem, NoiseConfig, RunOptions, ScreeningRule,
    SequenceStrategy, SolverConfig, StrategyKind, TargetMode, TargetVector,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] seqscreen::Error),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use seqscreen::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 3,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(E::InvalidParameter(_)) => 1,
            CliError::Core(E::DimensionMismatch(_) | E::ZeroTarget | E::ZeroColumn { .. }) => 2,
            CliError::Core(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "seqscreen", version, about = "Sequential safe screening for lasso")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic unit-norm dictionary and target.
    Gen(GenArgs),
    /// Print lambda_max and its (1-based) column index.
    LambdaMax(InputArgs),
    /// Unscreened solve at lambda = ratio * lambda_max.
    Solve(SolveArgs),
    /// Run a screening sequence and write its trace.
    Run(RunArgs),
    /// Run a benchmark described by a JSON config.
    Bench(BenchArgs),
    /// Write CSV plot series from a benchmark report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Target::Random)]
    target: Target,
    #[arg(long)]
    out_dict: PathBuf,
    #[arg(long)]
    out_x: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Random,
    InRange,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    Dmat,
    Csv,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    x: PathBuf,
    /// `csv` reads row-major, header-free text for both files.
    #[arg(long, value_enum, default_value_t = InputFormat::Dmat)]
    format: InputFormat,
    /// Stream the dictionary from disk in column blocks.
    #[arg(long)]
    file_backed: bool,
    /// Use the columns as stored instead of scaling them to unit norm.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    lambda_ratio: f64,
    #[arg(long, default_value_t = 1e-8)]
    gap_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,
    /// Also write the weights as a DVEC file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Dass,
    Geometric,
    DppFeedback,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Dome,
    Dpp,
    Strong,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    lambda_ratio: f64,
    #[arg(long, value_enum)]
    strategy: Strategy,
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, value_enum)]
    rule: Option<Rule>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk_size: usize,
    #[arg(long)]
    lambda_1_factor: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    gap_tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long)]
    noise_nsr: Option<f64>,
    #[arg(long)]
    noise_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    memory_cap_bytes: Option<usize>,
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = seqscreen::init_threads_from_env()
        .map_err(|e| CliError::Usage(e.to_string()))
        .and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(args) => cmd_gen(args),
        Command::LambdaMax(args) => cmd_lambda_max(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| seqscreen::Error::Io(e).into())
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| seqscreen::Error::Io(e).into())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values always serialize"));
}

fn load_inputs(args: &InputArgs) -> CliResult<(Dictionary, TargetVector)> {
    if args.file_backed && args.format == InputFormat::Csv {
        return Err(CliError::Usage("--file-backed needs DMAT input".into()));
    }
    let mut dict = match (args.format, args.file_backed) {
        (InputFormat::Csv, _) => Dictionary::load_csv(&args.dict)?,
        (InputFormat::Dmat, true) => Dictionary::open_dmat(&args.dict)?,
        (InputFormat::Dmat, false) => Dictionary::load_dmat(&args.dict)?,
    };
    let x = match args.format {
        InputFormat::Csv => TargetVector::load_csv(&args.x)?,
        InputFormat::Dmat => TargetVector::load_dvec(&args.x)?,
    };
    if !args.no_normalize && !dict.check_normalized()? {
        if dict.is_file_backed() {
            return Err(CliError::Usage(
                "file-backed dictionary is not unit-norm; normalize it or pass --no-normalize".into(),
            ));
        }
        log::info!("scaling dictionary columns to unit norm");
        dict = normalize_columns(&dict)?;
    }
    Ok((dict, x))
}

fn check_ratio(ratio: f64) -> CliResult<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--lambda-ratio must lie in (0, 1], got {ratio}")))
    }
}

fn solver_config(gap_tol: f64, max_iters: usize) -> SolverConfig {
    SolverConfig {
        max_iters,
        ..SolverConfig::with_gap_tol(gap_tol)
    }
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let mode = match args.target {
        Target::Random => TargetMode::Random,
        Target::InRange => TargetMode::InRange,
    };
    let (dict, x) = gen_synthetic(args.d, args.p, args.seed, mode)?;
    dict.write_dmat(&args.out_dict)?;
    format::write_dvec(&args.out_x, x.as_slice())?;
    Ok(())
}

fn cmd_lambda_max(args: InputArgs) -> CliResult<()> {
    let (dict, x) = load_inputs(&args)?;
    let lm = lambda_max(&dict, &x)?;
    print_json(&json!({ "lambda_max": lm.lambda_max, "index": lm.argmax_index + 1 }));
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> CliResult<()> {
    check_ratio(args.lambda_ratio)?;
    let (dict, x) = load_inputs(&args.input)?;
    let lm = lambda_max(&dict, &x)?;
    let lambda = args.lambda_ratio * lm.lambda_max;
    let problem = LassoProblem::new(&dict, &x, lambda)?;
    let solution = solve_lasso(&problem, None, &solver_config(args.gap_tol, args.max_iters))?;
    if let Some(path) = &args.out {
        format::write_dvec(path, &solution.w)?;
    }
    print_json(&json!({
        "lambda": lambda,
        "lambda_max": lm.lambda_max,
        "lambda_ratio": args.lambda_ratio,
        "objective": problem.primal_objective(&solution.w)?,
        "gap": solution.gap,
        "converged": solution.converged,
        "iterations": solution.iterations,
        "support_size": support_of(&solution.w).len(),
        "solve_seconds": solution.solve_seconds,
    }));
    if !solution.converged {
        return Err(CliError::Numerical(format!(
            "solver stopped after {} iterations with gap {:e}",
            solution.iterations, solution.gap
        )));
    }
    Ok(())
}

fn strategy_from_args(args: &RunArgs) -> CliResult<SequenceStrategy> {
    let kind = match args.strategy {
        Strategy::Dass => StrategyKind::Dass,
        Strategy::Geometric => StrategyKind::Geometric,
        Strategy::DppFeedback => StrategyKind::DppFeedback,
    };
    let mut strategy = match kind {
        StrategyKind::Geometric => {
            let n = args.n.ok_or_else(|| CliError::Usage("--N is required for geometric".into()))?;
            SequenceStrategy::geometric(n, ScreeningRule::Dome)
        }
        StrategyKind::Dass => SequenceStrategy::dass(args.r.unwrap_or(0.4)),
        StrategyKind::DppFeedback => SequenceStrategy::dpp_feedback(args.r.unwrap_or(0.4)),
    };
    if kind == StrategyKind::Geometric {
        strategy.r = args.r;
    } else {
        strategy.n = args.n;
    }
    strategy.rule = args.rule.map(|rule| match rule {
        Rule::Dome => ScreeningRule::Dome,
        Rule::Dpp => ScreeningRule::Dpp,
        Rule::Strong => ScreeningRule::Strong,
    });
    if kind == StrategyKind::Geometric && strategy.rule.is_none() {
        strategy.rule = Some(ScreeningRule::Dome);
    }
    if let Some(factor) = args.lambda_1_factor {
        strategy = strategy.with_lambda_1_factor(factor);
    }
    strategy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(strategy)
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    check_ratio(args.lambda_ratio)?;
    let strategy = strategy_from_args(&args)?;
    if args.noise_threshold.is_some() && args.noise_nsr.is_none() {
        return Err(CliError::Usage("--noise-threshold needs --noise-nsr".into()));
    }
    let (dict, x) = load_inputs(&args.input)?;
    let lm = lambda_max(&dict, &x)?;
    let opts = RunOptions {
        solver: solver_config(args.gap_tol, args.max_iters),
        noise: args.noise_nsr.map(|nsr| NoiseConfig {
            nsr,
            threshold: args.noise_threshold,
            seed: args.seed,
        }),
        chunk_size: args.chunk_size,
        record_masks: false,
        memory_cap_bytes: args.memory_cap_bytes,
    };
    let trace = run_sequence(&dict, &x, args.lambda_ratio * lm.lambda_max, &strategy, &opts)?;
    write_file(&args.trace, &trace.to_json()?)?;
    log::info!(
        "{}: N = {}, final rejection {:.4}",
        strategy.label(),
        trace.n,
        trace.final_rejection()
    );
    if !trace.all_converged() {
        return Err(CliError::Numerical("at least one step did not reach the gap tolerance".into()));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let config = BenchConfig::from_json(&read_file(&args.config)?).map_err(|e| match e {
        seqscreen::Error::InvalidParameter(msg) => seqscreen::Error::Format(msg),
        other => other,
    })?;
    let report = run_benchmark(&config)?;
    write_file(&args.out, &report.to_json()?)?;
    if let Some(csv) = &args.csv {
        write_file(csv, &report.rows_csv())?;
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let report = BenchReport::from_json(&read_file(&args.input)?)?;
    fs::create_dir_all(&args.out).map_err(seqscreen::Error::Io)?;
    for (name, contents) in report.series() {
        write_file(&args.out.join(name), &contents)?;
    }
    Ok(())
}
