mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Zero-base generalized few-shot experiments on frozen features.
#[derive(Parser, Debug)]
#[command(name = "fsn", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic non-negative feature dataset.
    Synth(SynthArgs),
    /// Pretrain the base linear classifier and save a checkpoint.
    Pretrain(PretrainArgs),
    /// Run episodes for one or more ablations and write reports.
    Run(RunArgs),
    /// Write per-class weight statistics of a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON synthetic config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset file (`.csv`/`.txt` for text, anything else binary).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Feature dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the pretraining seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ZeroBase,
    Balanced,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Feature dataset file; the config's synthetic section is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    /// Shot counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub shots: Vec<usize>,
    /// Overrides the config's way count.
    #[arg(long)]
    pub ways: Option<usize>,
    /// Overrides the episode seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablations, comma separated: none, mc, mc+vb, mc+vb+lo, cosine,
    /// freeze-base, l1, l2, norm-eq, vb-in-training, mc-both, balanced.
    #[arg(long, value_delimiter = ',', default_value = "mc+vb+lo")]
    pub ablation: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Overrides the base-data mode for every ablation.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Pretrained checkpoint; pretraining runs when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for `stats.csv` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FSN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Run(a) => commands::run(&a),
        Command::Analyze(a) => commands::analyze(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
