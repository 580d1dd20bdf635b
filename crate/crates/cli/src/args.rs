use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "decon", version, about = "Dual-branch long-tailed semi-supervised learning on synthetic mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset and write labeled.csv, unlabeled.csv, sidecar.csv and mixture.json.
    Gen(GenArgs),
    /// Train the dual-branch method or the FixMatch control.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one or more post-hoc intensities.
    Eval(EvalArgs),
    /// Run the lemma suite and write lemma_report.json.
    Verify(VerifyArgs),
    /// Train and evaluate across unlabeled-distribution shapes and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the file (repeatable).
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Read pools from a directory written by `gen` instead of sampling.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Shorthand for `--override algorithm=...`.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Also checkpoint every N epochs under checkpoints/ (0: final only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to resolved-config.json beside the checkpoint.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(short = 'o', long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Post-hoc intensities; 0 disables adjustment. Defaults to the trained value.
    #[arg(long, value_delimiter = ',')]
    pub tau3: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite seed; `DECON_SEED` is used when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Shapes to run, by name.
    #[arg(long, value_delimiter = ',', default_value = "consistent,uniform,reversed,middle,headtail")]
    pub shapes: Vec<String>,
    /// Number of random Dirichlet shapes added to the list.
    #[arg(long, default_value_t = 2)]
    pub dirichlet: usize,
    /// Concentration of the Dirichlet shapes.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Seeds per shape, counting up from the configured seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Algorithms to run; defaults to the configured one.
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Vec<String>,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}
