//! `mtsn` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 runtime failure
//! (training divergence, failed gradient check, failing grid cell).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mtsn", version, about = "Multi-lingual teacher-student intent classification")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic bilingual corpus.
    Gen(GenArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Train and evaluate a grid of frameworks, languages, and fractions.
    Grid(GridArgs),
    /// Embedding similarity and 2-D projection for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct OutArg {
    /// Output directory [default: $MTSN_OUT_DIR/<command>, else ./mtsn-out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Named corpus preset.
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// JSON file with corpus fields overriding the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also keep only this stratified fraction of the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest written by `gen`.
    #[arg(long)]
    pub train: PathBuf,
    /// JSON run spec; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Framework name (mtsn, baseline2).
    #[arg(long)]
    pub model: Option<String>,
    /// Training languages: a tag, tags joined with '+', or `both`.
    #[arg(long)]
    pub train_lang: Option<String>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test manifest written by `gen`.
    #[arg(long)]
    pub test: PathBuf,
    /// Restrict to these test languages (tag, tags joined with '+', or `both`).
    #[arg(long)]
    pub test_lang: Option<String>,
    /// Append a CSV row to <out>/eval.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// JSON run spec; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest; with --test, used instead of generating a corpus.
    #[arg(long, requires = "test")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    /// Corpus preset to generate when no manifests are given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
    /// Comma-separated framework names.
    #[arg(long, value_delimiter = ',')]
    pub frameworks: Option<Vec<String>>,
    /// Comma-separated training-language sets.
    #[arg(long, value_delimiter = ',')]
    pub train_langs: Option<Vec<String>>,
    /// Comma-separated training fractions; 1.0 is always included.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Replicate seeds per cell.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Checkpoint taken before training, for the initial-vs-final comparison.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Relative error tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Random points per operation.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add a case whose backward rule is wrong by this relative amount.
    #[arg(long, value_name = "REL")]
    pub inject_fault: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Grid(a) => commands::grid(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

/// The error and its causes, skipping causes already quoted by a parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}
