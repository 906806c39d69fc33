use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use switchvae::data::{DatasetConfig, Family, RenderMode, Split};
use switchvae::losses::LossWeights;
use switchvae::model::{ContrastivePolicy, Modality, ModelConfig};
use switchvae::scalar::Precision;
use switchvae::trainer::{TrainConfig, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "switchvae", version, about = "Switch-encoded voxel / multi-view VAE lab")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired voxel / multi-view dataset.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints plus an epoch CSV.
    Train(TrainArgs),
    /// Reconstruction metrics of a checkpoint on a dataset split.
    EvalRecon(EvalReconArgs),
    /// SVM classification accuracy on frozen encoder means.
    EvalClassify(EvalClassifyArgs),
    /// Latent-space interpolation, arithmetic and traversal.
    #[command(subcommand)]
    Latent(LatentCommand),
}

/// Where a command writes. `--out` wins; otherwise `<out-root>/<run-id>`.
#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "SWITCHVAE_OUT", default_value = "runs")]
    pub out_root: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// key=value file of defaults for this command; command-line flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    Train,
    Test,
    All,
}

impl SplitSel {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitSel::Train => Some(Split::Train),
            SplitSel::Test => Some(Split::Test),
            SplitSel::All => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_delimiter = ',', default_values_t = Family::ALL.to_vec())]
    pub families: Vec<Family>,
    /// Samples per family.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DatasetConfig::default().train_fraction)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = DatasetConfig::default().resolution)]
    pub resolution: usize,
    #[arg(long, default_value_t = DatasetConfig::default().views)]
    pub views: usize,
    /// Defaults to the voxel resolution.
    #[arg(long)]
    pub view_height: Option<usize>,
    /// Defaults to the voxel resolution.
    #[arg(long)]
    pub view_width: Option<usize>,
    #[arg(long, default_value_t = RenderMode::Silhouette)]
    pub render_mode: RenderMode,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest, or the directory holding it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = TrainMode::Switch)]
    pub mode: TrainMode,
    #[arg(long, default_value_t = TrainConfig::default().p_vox)]
    pub p_vox: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_contras)]
    pub lambda_contras: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_kl)]
    pub lambda_kl: f64,
    /// Weight of filled voxels in the reconstruction loss.
    #[arg(long, default_value_t = LossWeights::default().gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = LossWeights::default().recon_weight)]
    pub recon_weight: f64,
    /// Normalize latents to unit length before the contrastive distance.
    #[arg(long)]
    pub unit_norm: bool,
    #[arg(long, default_value_t = ContrastivePolicy::BothSided)]
    pub contrastive_policy: ContrastivePolicy,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr0)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    #[arg(long, default_value_t = TrainConfig::default().decay)]
    pub decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().decay_every)]
    pub decay_every: usize,
    #[arg(long, default_value_t = TrainConfig::default().decay_after)]
    pub decay_after: usize,
    /// Rescale each batch gradient to at most this L2 norm.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long, default_value_t = TrainConfig::default().collapse_threshold)]
    pub collapse_threshold: f64,
    #[arg(long, default_value_t = TrainConfig::default().collapse_patience)]
    pub collapse_patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Extra checkpoint every N epochs; 0 writes only the final one.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = ModelConfig::default().latent)]
    pub latent: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ModelConfig::default().image_channels)]
    pub image_channels: Vec<usize>,
    #[arg(long, default_value_t = ModelConfig::default().view_feature)]
    pub view_feature: usize,
    #[arg(long, default_value_t = ModelConfig::default().gru_hidden)]
    pub gru_hidden: usize,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalReconArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitSel::Test)]
    pub split: SplitSel,
    /// Encoder used to reconstruct.
    #[arg(long, default_value_t = Modality::Vox)]
    pub modality: Modality,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalClassifyArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Default for both SVM manifests.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub svm_train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub svm_test_manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitSel::Train)]
    pub svm_train_split: SplitSel,
    #[arg(long, value_enum, default_value_t = SplitSel::Test)]
    pub svm_test_split: SplitSel,
    #[arg(long, default_value_t = Modality::Vox)]
    pub modality: Modality,
    #[arg(long, default_value_t = 1.0)]
    pub svm_c: f64,
    /// RBF width; defaults to 1 / latent size.
    #[arg(long)]
    pub svm_gamma: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Subcommand)]
pub enum LatentCommand {
    /// Decode evenly spaced codes between two samples.
    Interpolate(InterpolateArgs),
    /// Decode `base + (plus - minus)`.
    Arithmetic(ArithmeticArgs),
    /// Sweep one latent coordinate of a sample.
    Traverse(TraverseArgs),
}

/// Codes come from a latent CSV (`--latents`) or from encoding `--data`.
#[derive(Debug, Args)]
pub struct LatentSource {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitSel::All)]
    pub split: SplitSel,
    #[arg(long, default_value_t = Modality::Vox)]
    pub modality: Modality,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[command(flatten)]
    pub source: LatentSource,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ArithmeticArgs {
    #[arg(long)]
    pub base: Option<String>,
    #[arg(long)]
    pub plus: Option<String>,
    #[arg(long)]
    pub minus: Option<String>,
    #[command(flatten)]
    pub source: LatentSource,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = vec![-2.0, -1.0, 0.0, 1.0, 2.0])]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub source: LatentSource,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}
