use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ggp", version, about = "Graph Gaussian process node classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the GGP on the train split (optionally train ∪ val).
    Train(TrainArgs),
    /// Accuracy and confusion counts of a checkpoint on one split.
    Eval(EvalArgs),
    /// Active-learning simulation with learning curves and ALC.
    Active(ActiveArgs),
    /// Finite-difference check of the ELBO gradient on a generated instance.
    Gradcheck(GradcheckArgs),
    /// Write a stochastic block model dataset.
    Synth(SynthArgs),
    /// Load a dataset directory and report its statistics.
    ValidateData(DataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Poly3,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Ggp,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AcqArg {
    Sopt,
    Rand,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory; relative names also resolve under $GGP_DATA_ROOT.
    #[arg(long)]
    pub data: PathBuf,
}

/// Fit settings. A `key = value` config file is applied first, flags after.
#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quad_points: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_name = "BOOL")]
    pub train_z: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub tfidf: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub init_hyperparameters: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Independent fits with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Also train on the validation split.
    #[arg(long)]
    pub use_val_labels: bool,
    #[arg(long, default_value = "ggp-train")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct ActiveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long, value_enum, default_value_t = ModelArg::Ggp)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value_t = AcqArg::Sopt)]
    pub acq: AcqArg,
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    /// Number of seeds, counted up from `--seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    /// Grounded-Laplacian regularizer for SOPT.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    #[arg(long, default_value = "ggp-active")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub inducing: usize,
    #[arg(long, default_value_t = 8)]
    pub features: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = KernelArg::Poly3)]
    pub kernel: KernelArg,
    #[arg(long)]
    pub quad_points: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_per_block: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1.0)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_out: f64,
    #[arg(long, default_value_t = 5)]
    pub d_per_block: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub train_per_block: usize,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
}
