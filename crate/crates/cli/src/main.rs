mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radset", version, about = "Patient-specific radiomic feature-set retrieval")]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort directory.
    Gen(GenArgs),
    /// Extract radiomic features and assign the train/validation split.
    Extract(ExtractArgs),
    /// Train encoder, scorer and classifier.
    Train(TrainArgs),
    /// Retrieve each subject's top feature set.
    Retrieve(RetrieveArgs),
    /// Evaluate on the validation split, optionally with baselines.
    Eval(EvalArgs),
    /// Exhaustive oracle and retrieval-gap audit on a feature subpool.
    Oracle(OracleArgs),
    /// Per-subject evidence report.
    Report(ReportArgs),
    /// Export plot-ready CSV tables from a run directory.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Cohort directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    /// Volume size as DxHxW, e.g. 16x32x32.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    classes: Option<usize>,
    /// Multiplier on planted-signal magnitudes.
    #[arg(long)]
    signal_scale: Option<f64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    bin_count: Option<usize>,
}

/// Retrieval hyperparameters shared by training and inference.
#[derive(Debug, Default, Args)]
struct RetrievalFlags {
    /// Features per set.
    #[arg(long)]
    k: Option<usize>,
    /// Preliminary pool size.
    #[arg(long)]
    p0: Option<usize>,
    /// Retained pool size.
    #[arg(long)]
    pool_m: Option<usize>,
    /// Supervised pool members per subject.
    #[arg(long)]
    q: Option<usize>,
    /// Probe gradient steps.
    #[arg(long)]
    psteps: Option<usize>,
    /// Weight of the scorer loss.
    #[arg(long)]
    lambda_scr: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Run directory for checkpoints, history and the model.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    retrieval: RetrievalFlags,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    /// Continue from the last stage checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Validation,
    All,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Run directory holding the trained model.
    #[arg(long)]
    run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Validation)]
    split: SplitChoice,
    /// Preliminary pool size at inference.
    #[arg(long)]
    p0: Option<usize>,
    /// Retained pool size at inference.
    #[arg(long)]
    pool_m: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also evaluate the random-set, all-feature and marginal top-k baselines.
    #[arg(long)]
    baselines: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of subpool features (the most relevant by single-feature reward).
    #[arg(long)]
    subpool: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Support/query draws averaged per reward.
    #[arg(long)]
    draws: Option<usize>,
    /// Audit this trained model's retrieval; without it the scorer is the
    /// reward oracle itself.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Validation)]
    split: SplitChoice,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram bins per subject.
    #[arg(long)]
    bins: Option<usize>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected DxHxW, got `{s}`"));
    }
    let mut dims = [0; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.parse().map_err(|_| format!("bad dimension `{p}`"))?;
    }
    Ok(dims)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
