use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod points;

/// Train and apply paired pushforward maps between two point clouds.
#[derive(Parser, Debug)]
#[command(name = "parot", version, about)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Shared {
    /// Seed; overrides the seeds in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the benchmark (default: one per logical core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Experiment config JSON.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a benchmark dataset (source, target and pairs) as CSV.
    Generate(GenerateArgs),
    /// Train a model from a config; writes checkpoint, result and loss trace.
    Train,
    /// Push points through a trained map.
    Transform(TransformArgs),
    /// Draw samples from a trained model.
    Sample(SampleArgs),
    /// Log-likelihood of points, with an outlier flag.
    Loglik(LoglikArgs),
    /// Run the benchmark grid and summarize medians over seeds.
    Benchmark(BenchmarkArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mog,
    Moons,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MapArg {
    Linear,
    Nonlinear,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Mog,
    Moons,
    All,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long, value_enum)]
    pub true_map: Option<MapArg>,
    #[arg(long)]
    pub paired_prop: Option<f64>,
    /// Embed both domains isometrically in this many dimensions.
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Apply the inverse map (target to source).
    #[arg(long)]
    pub inverse: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub domain: Domain,
    #[arg(long)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct LoglikArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub domain: Domain,
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: SuiteArg,
    /// Seeds per cell.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Search the full hyperparameter grid in every cell.
    #[arg(long)]
    pub search: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Input(String),
    Output(String),
    Core(parot::Error),
    TrainingFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Input(m) => write!(f, "input: {m}"),
            CliError::Output(m) => write!(f, "output: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::TrainingFailed(m) => write!(f, "training failed: {m}"),
        }
    }
}

impl From<parot::Error> for CliError {
    fn from(e: parot::Error) -> Self {
        match e {
            parot::Error::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::TrainingFailed(_) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let shared = cli.shared;
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&shared, &a),
        Command::Train => commands::train(&shared),
        Command::Transform(a) => commands::transform(&shared, &a),
        Command::Sample(a) => commands::sample(&shared, &a),
        Command::Loglik(a) => commands::loglik(&shared, &a),
        Command::Benchmark(a) => commands::benchmark(&shared, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("parot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
