use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcdb::ErrorClass;

mod commands;

/// Simultaneous inference for high-dimensional linear models with latent
/// confounders.
#[derive(Debug, Parser)]
#[command(name = "dcdb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a confounded dataset and write data.csv and truth.csv.
    Simulate(SimulateArgs),
    /// Test every coordinate of a CSV dataset and write report.csv.
    Analyze(AnalyzeArgs),
    /// Run a simulation grid and write results_raw.csv and results_agg.csv.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides simulate.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    pub response: String,
    /// Ground truth CSV (coordinate,beta,omega_jj) for scoring rejections.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// dc, trim or standard.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fixed number of confounders instead of estimating it.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides benchmark.base_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Analyze(args) => commands::analyze(args),
        Command::Benchmark(args) => commands::benchmark(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(err.class()))
        }
    }
}
