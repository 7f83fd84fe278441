use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mefsfi",
    version,
    about = "Spatial-frequency multi-exposure image fusion"
)]
pub struct Cli {
    /// File of `key=value` lines supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fuse an over/under-exposed pair
    #[command(args_override_self = true)]
    Fuse(FuseArgs),
    /// Amplitude/phase exchange experiment
    #[command(args_override_self = true)]
    Swap(SwapArgs),
    /// Train the fusion network
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score fused results against their sources
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Compare model gradients with central differences
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
    /// Write the feature maps of every fusion module as image grids
    #[command(args_override_self = true)]
    DumpFeatures(DumpFeaturesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FuseMode {
    Network,
    Classical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseSource {
    Over,
    Under,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub over: PathBuf,
    #[arg(long)]
    pub under: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint for network mode
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FuseMode::Network)]
    pub mode: FuseMode,
    /// Amplitude weight of the over-exposed input (classical mode)
    #[arg(long, default_value_t = 0.5)]
    pub wa: f64,
    /// Amplitude weight of the under-exposed input (classical mode)
    #[arg(long, default_value_t = 0.5)]
    pub wb: f64,
    #[arg(long, value_enum, default_value_t = PhaseSource::Over)]
    pub phase_from: PhaseSource,
}

#[derive(Args, Debug)]
pub struct SwapArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "synthetic"])))]
pub struct TrainArgs {
    /// Directory of `<id>_over` / `<id>_under` images
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic exposure pairs instead
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Base image for synthetic pairs (default: a procedural scene)
    #[arg(long, requires = "synthetic")]
    pub base: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// CSV log (default: the checkpoint path with a .csv extension)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 9e-3)]
    pub weight_decay: f64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Overwrite the checkpoint every this many steps (0: only at the end)
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 16)]
    pub growth: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    /// Abort on the first non-finite intermediate value
    #[arg(long)]
    pub checked: bool,
    /// Record wall-clock seconds in the log
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `<id>_over`, `<id>_under`, `<id>_fused` images
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub growth: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
}

#[derive(Args, Debug)]
pub struct DumpFeaturesArgs {
    #[arg(long)]
    pub over: PathBuf,
    #[arg(long)]
    pub under: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
}
