//! Flag definitions.

use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};

use drivernet::config::{Aggregation, FusionStrategy, ModalitySet, Regime};

pub const DATA_ENV: &str = "DRIVERNET_DATA";

#[derive(Debug, Parser)]
#[command(name = "drivernet", version, about = "Driver take-over readiness: synthetic data, training, evaluation and audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory
    Gen(GenArgs),
    /// Train on the train split and evaluate on the test split
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// k-fold cross-validation over the whole dataset
    Crossval(CrossvalArgs),
    /// Print parameter counts beside the published values
    Params(ParamsArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Per-clip inference latency of each fusion strategy
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Crossval(_) => "crossval",
            Command::Params(_) => "params",
            Command::Gradcheck(_) => "gradcheck",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelSelector {
    /// Context block with its own head
    Context,
    /// Feature block with its own head
    Feature,
    /// Assembled network (same as drivernet)
    Fusion,
    /// Assembled network
    Drivernet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Published widths, 32x32 frames
    Paper,
    /// Narrow widths, 8x8 frames
    Compact,
    /// Tiny widths, 4 frames of 8x8
    Miniature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

fn keyword<T: std::str::FromStr + Clone + Send + Sync + 'static>(values: &'static [&'static str]) -> impl TypedValueParser<Value = T>
where
    T::Err: std::fmt::Debug,
{
    PossibleValuesParser::new(values).map(|s| s.parse::<T>().expect("listed keyword parses"))
}

fn parse_modalities(s: &str) -> Result<ModalitySet, String> {
    s.parse().map_err(|e: drivernet::Error| e.to_string())
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Model to build
    #[arg(long, value_enum)]
    pub model: Option<ModelSelector>,
    /// View aggregation of the context block
    #[arg(long = "agg", value_parser = keyword::<Aggregation>(&["gap", "ws", "conv1d"]))]
    pub aggregation: Option<Aggregation>,
    /// Fusion strategy of the assembled network
    #[arg(long, value_parser = keyword::<FusionStrategy>(&["cf", "af", "caf"]))]
    pub fusion: Option<FusionStrategy>,
    /// Feature streams: "all" or a comma list of body, head, hand
    #[arg(long, value_parser = parse_modalities)]
    pub modalities: Option<ModalitySet>,
    /// Width preset
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Frames per clip (N)
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame side in pixels
    #[arg(long)]
    pub frame_size: Option<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainingArgs {
    /// Training epochs
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// all: train everything end to end; fusion: freeze pretrained blocks
    #[arg(long, value_parser = keyword::<Regime>(&["all", "fusion"]), default_value = "all")]
    pub regime: Regime,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of clips
    #[arg(long, default_value_t = 600)]
    pub clips: usize,
    /// Random seed
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Dataset directory to write
    #[arg(long, env = DATA_ENV)]
    pub out: PathBuf,
    /// Frames per clip
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Frame side in pixels
    #[arg(long, default_value_t = 32)]
    pub frame_size: usize,
    /// Frame rate recorded in the manifest
    #[arg(long, default_value_t = 10)]
    pub fps: u32,
    /// Fraction of each class assigned to the test split
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Standard deviation of pixel noise
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Frames inspected by the readiness rule
    #[arg(long, default_value_t = 16)]
    pub window: usize,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Replace an existing dataset in the output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Random seed for initialization, shuffling and dropout
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pretrained context checkpoint for --regime fusion
    #[arg(long)]
    pub context_checkpoint: Option<PathBuf>,
    /// Pretrained feature checkpoint for --regime fusion
    #[arg(long)]
    pub feature_checkpoint: Option<PathBuf>,
    /// Run directory
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Which clips to evaluate
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Run directory
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    /// Dataset directory
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Random seed for folds, initialization, shuffling and dropout
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of folds
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Folds trained concurrently
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Run directory
    #[arg(long, default_value = "runs/crossval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run directory
    #[arg(long, default_value = "runs/params")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random seed for probe inputs and initialization
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only check individual layers
    #[arg(long)]
    pub layers_only: bool,
    /// Run directory
    #[arg(long, default_value = "runs/gradcheck")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset directory
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Trained assembled checkpoints, one per strategy; missing ones are freshly initialized
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random seed for fresh networks
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test clips to time
    #[arg(long, default_value_t = 32)]
    pub clips: usize,
    /// Passes over the clips
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Run directory
    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
}
