use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drkf_sim::check::check_scenario;
use drkf_sim::config::ScenarioConfig;
use drkf_sim::output::{self, Summary};
use drkf_sim::scenario::{self, ChannelMode, FilterKind, Scenario, TABLE2};
use drkf_sim::{run_monte_carlo, SimError};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "drkf",
    version,
    about = "Distributed robust Kalman filter experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo run; writes CSV, a summary and optional SVG charts
    Run(RunArgs),
    /// Observability and structure checks
    Check(CheckArgs),
    /// The five initial-quantity cases next to the published values
    Table2(Table2Args),
    /// List built-in scenarios
    Scenarios,
}

#[derive(Args)]
struct Source {
    /// Built-in scenario name
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// TOML scenario file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Initial-quantity case of example1 (1-5)
    #[arg(long)]
    case: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// drkf, drkf-swf, ckf or crkf
    #[arg(long)]
    filter: Option<FilterKind>,
    /// Sliding-window length
    #[arg(long = "L")]
    window: Option<usize>,
    /// Optimization interval
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "DRKF_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Also write mse and trp SVG charts
    #[arg(long)]
    svg: bool,
    /// Channel noise uniform on [-1, 1] per entry
    #[arg(long, conflicts_with = "bound_respecting")]
    paper_literal: bool,
    /// Channel noise scaled to stay within the declared bounds
    #[arg(long)]
    bound_respecting: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    source: Source,
    /// Observability window length
    #[arg(long, default_value_t = 4)]
    nbar: usize,
}

#[derive(Args)]
struct Table2Args {
    #[arg(long, default_value_t = scenario::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = scenario::DEFAULT_RUNS)]
    runs: usize,
    #[arg(long, env = "DRKF_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
}

fn load(source: &Source) -> Result<Scenario, SimError> {
    let s = match (&source.scenario, &source.config) {
        (_, Some(path)) => {
            let mut cfg = ScenarioConfig::load(path)?;
            if source.case.is_some() {
                cfg.case = source.case;
            }
            cfg.to_scenario()?
        }
        (name, None) => scenario::preset(name.as_deref().unwrap_or("example1"), source.case)?,
    };
    match source.horizon {
        Some(h) => s.with_horizon(h),
        None => Ok(s),
    }
}

fn run(args: RunArgs) -> Result<ExitCode, SimError> {
    let mut s = load(&args.source)?;
    if let Some(f) = args.filter {
        s.filter = f;
    }
    s.window = args.window.unwrap_or(s.window);
    s.delta = args.delta.unwrap_or(s.delta);
    s.runs = args.runs.unwrap_or(s.runs);
    s.seed = args.seed.unwrap_or(s.seed);
    if args.paper_literal {
        s.channel_mode = ChannelMode::PaperLiteral { amplitude: 1.0 };
    } else if args.bound_respecting {
        s.channel_mode = ChannelMode::BoundRespecting { stretch: 1.0 };
    }
    let stats = run_monte_carlo(&s)?;
    let summary = Summary::new(&stats, s.seed, s.tail);
    let art = output::write_artifacts(&stats, &summary, &args.out_dir, args.svg)?;
    println!("scenario = {}", s.name);
    println!("filter = {}", s.filter);
    println!("runs = {}", s.runs);
    println!("seed = {}", s.seed);
    println!(
        "MSE_max = {:.6}  (k = {}..{})",
        summary.mse_max, s.tail.0, s.tail.1
    );
    println!("P_max = {:.6}", summary.p_max);
    println!(
        "consistent cells = {:.2}%",
        100.0 * stats.consistency_fraction(s.warmup)
    );
    if s.filter == FilterKind::DrkfSwf {
        let f = stats.fusion;
        println!(
            "window fusion: optimized {}, infeasible {}, not converged {}",
            f.optimized, f.infeasible, f.not_converged
        );
    }
    println!("csv = {}", art.csv.display());
    for p in &art.svgs {
        println!("svg = {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn check(args: CheckArgs) -> Result<ExitCode, SimError> {
    let s = load(&args.source)?;
    let report = check_scenario(&s, args.nbar)?;
    print!("{}", report.render());
    Ok(if report.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK)
    })
}

fn table2(args: Table2Args) -> Result<ExitCode, SimError> {
    let mut csv = String::from("case,MSE_max,P_max,ref_MSE_max,ref_P_max\n");
    println!(
        "{:>4}  {:>9}  {:>9}  {:>11}  {:>11}",
        "case", "MSE_max", "P_max", "ref MSE", "ref P"
    );
    for row in TABLE2 {
        let mut s = scenario::example1(row.case)?;
        s.seed = args.seed;
        s.runs = args.runs;
        let stats = run_monte_carlo(&s)?;
        let sum = Summary::new(&stats, s.seed, s.tail);
        println!(
            "{:>4}  {:>9.4}  {:>9.4}  {:>11.2}  {:>11.2}",
            row.case, sum.mse_max, sum.p_max, row.mse_max, row.p_max
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.case,
            output::fmt_num(sum.mse_max),
            output::fmt_num(sum.p_max),
            row.mse_max,
            row.p_max
        ));
    }
    std::fs::create_dir_all(&args.out_dir)
        .and_then(|_| std::fs::write(args.out_dir.join("table2.csv"), csv))
        .map_err(|source| SimError::Io {
            path: args.out_dir.clone(),
            source,
        })?;
    Ok(ExitCode::SUCCESS)
}

fn scenarios() -> Result<ExitCode, SimError> {
    for name in scenario::PRESETS {
        let s = scenario::preset(name, None)?;
        println!(
            "{name:<16} sensors={:<3} n={} horizon={} runs={}",
            s.num_sensors(),
            s.n(),
            s.horizon(),
            s.runs
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Check(a) => check(a),
        Command::Table2(a) => table2(a),
        Command::Scenarios => scenarios(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            })
        }
    }
}
