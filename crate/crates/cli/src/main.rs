mod commands;
mod error;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "ctxfuse", version, about = "Context-aware multimodal fusion: training, ablation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate every seeded run of an experiment config.
    Train(TrainArgs),
    /// Print the per-run test evaluations stored in a report.
    Eval(EvalArgs),
    /// Run ablation variants of a config.
    Ablate(AblateArgs),
    /// Finite-difference gradient check of the assembled model.
    Gradcheck(GradcheckArgs),
    /// Transport between two CSV point clouds.
    Ot(OtArgs),
    /// ECE, ACE and reliability bins for a CSV of predictions.
    Calib(CalibArgs),
    /// Almost stochastic order test between two score files.
    Aso(AsoArgs),
    /// Log-mel, delta and delta-delta image of a WAV file.
    Features(FeaturesArgs),
    /// Render report files as one CSV summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Experiment config (TOML with dotted keys).
    #[arg(short, long)]
    config: PathBuf,
    /// Report file to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Name recorded in the report; defaults to the config file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(short, long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Directory for one report per variant and a summary.csv.
    #[arg(short, long)]
    out_dir: PathBuf,
    /// full, no-context, no-gate, no-transport, repeat-vector, no-fusion,
    /// layers, or all (the first six).
    #[arg(long, default_value = "all")]
    axis: String,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Entries checked per parameter.
    #[arg(long, default_value_t = 8)]
    entries: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Emd,
    Sinkhorn,
}

#[derive(Debug, Args)]
struct OtArgs {
    /// Source points, one per row.
    #[arg(long)]
    source: PathBuf,
    /// Target points, one per row.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value_t = Solver::Emd)]
    solver: Solver,
    /// sqeuclidean or euclidean.
    #[arg(long, default_value = "sqeuclidean")]
    metric: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Write the coupling as CSV.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Write the barycentric image of the source points as CSV.
    #[arg(long)]
    mapped: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibArgs {
    /// CSV rows of prob_class0, prob_class1, label.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 10)]
    ranges: usize,
    /// ACE ignores class probabilities below this value.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = TableFormat::Json)]
    format: TableFormat,
}

#[derive(Debug, Args)]
struct AsoArgs {
    /// Scores of the candidate, one per line.
    a: PathBuf,
    /// Scores of the baseline, one per line.
    b: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 50)]
    comparisons: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FeatureFormat {
    Tensor,
    Csv,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Mono or stereo WAV, 16-bit PCM or 32-bit float.
    #[arg(short, long)]
    input: PathBuf,
    /// Tensor file, or the prefix of three per-channel CSV files.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureFormat::Tensor)]
    format: FeatureFormat,
    #[arg(long, default_value_t = 2048)]
    n_fft: usize,
    #[arg(long, default_value_t = 1024)]
    hop: usize,
    #[arg(long, default_value_t = 224)]
    n_mels: usize,
    #[arg(long, default_value_t = 9)]
    delta_width: usize,
    #[arg(long, default_value_t = 80.0)]
    top_db: f64,
    #[arg(long, default_value_t = 224)]
    image_size: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report files written by train or ablate.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Ot(a) => commands::ot(&a),
        Command::Calib(a) => commands::calib(&a),
        Command::Aso(a) => commands::aso(&a),
        Command::Features(a) => commands::features(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
