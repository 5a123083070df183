//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lfagcl", version, about = "LFA-augmented graph contrastive recommendation")]
pub struct Cli {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for splitting, factor initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Config override, `key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a block-structured synthetic interaction file.
    Synth(SynthArgs),
    /// Load, deduplicate and split interactions into a dataset bundle.
    Prepare(PrepareArgs),
    /// Fit the latent factors on the training split.
    PretrainLfa(PretrainArgs),
    /// Train embeddings with early stopping on the validation split.
    Train(TrainArgs),
    /// Compute Recall@K and NDCG@K of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Compare two checkpoints per user-degree group.
    GroupAnalysis(GroupArgs),
    /// Train and evaluate one model per grid value.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 300)]
    pub items: usize,
    #[arg(long, default_value_t = 10)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.02)]
    pub density: f64,
    /// Probability that an interaction stays inside the user's block.
    #[arg(long, default_value_t = 0.8)]
    pub in_block: f64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Field delimiter: a single character, `tab`, `comma` or `space`.
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary file; defaults to the configured `stats` path.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub lfa: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Cutoffs; defaults to the configured `eval_k`.
    #[arg(long = "k")]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Checkpoint whose improvement is reported.
    #[arg(long)]
    pub model: PathBuf,
    /// Reference checkpoint, typically trained with lambda1 = 0.
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "groups.tsv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Lambda1,
    Tau,
    Dropout,
}

impl Axis {
    pub fn key(self) -> &'static str {
        match self {
            Axis::Lambda1 => "lambda1",
            Axis::Tau => "tau",
            Axis::Dropout => "dropout_rate",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub lfa: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
