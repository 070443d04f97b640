use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "cwt", version, about = "Component-wise transformation attacks on small convnets")]
pub struct Cli {
    /// Worker threads (default: available cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value file supplying flags; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Train a convnet and write a checkpoint.
    Train(TrainArgs),
    /// Craft adversarial examples against one surrogate.
    Attack(AttackArgs),
    /// Attack a surrogate and score transfer to target models.
    Eval(EvalArgs),
    /// Re-run eval for a list of values of one CWT hyperparameter.
    Sweep(SweepArgs),
    /// Grad-CAM heatmap of one image.
    Heatmap(HeatmapArgs),
    /// Adjoint, gradient, identity and aggregation self-tests.
    Selfcheck(SelfcheckArgs),
    /// Verify an adversarial batch stays inside its L-inf ball and [0, 1].
    CheckLinf(CheckLinfArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Attack(_) => "attack",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Heatmap(_) => "heatmap",
            Command::Selfcheck(_) => "selfcheck",
            Command::CheckLinf(_) => "check-linf",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DataArgs {
    /// `mnist:DIR` (IDX files) or `cifar10:FILE` (binary batch).
    #[arg(long)]
    pub dataset: String,
    /// MNIST split, `train` or `test` (default depends on the command).
    #[arg(long)]
    pub split: Option<String>,
    /// Keep only the first N images.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AttackFlags {
    #[arg(long, default_value_t = 16.0 / 255.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Step size (default eps / iters).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Transformed copies per gradient (default depends on the attack).
    #[arg(long)]
    pub copies: Option<usize>,
    /// Blocks per side for cwt and bsr.
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub smin: f64,
    #[arg(long, default_value_t = 1.3)]
    pub smax: f64,
    /// Maximum rotation in degrees (cwt 26, bsr 24).
    #[arg(long)]
    pub rot_max: Option<f64>,
    /// Blocks rotated per cwt copy.
    #[arg(long, default_value_t = 2)]
    pub rot_k: usize,
    #[arg(long)]
    pub no_pre_interp: bool,
    /// Interpolation kernel, `bilinear` or `nearest`.
    #[arg(long, default_value = "bilinear")]
    pub kernel: String,
    #[arg(long, default_value_t = 0.5)]
    pub dim_prob: f64,
    #[arg(long, default_value_t = 1.1)]
    pub dim_rate: f64,
    #[arg(long, default_value_t = 5)]
    pub sim_scales: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Preset name (tiny, wide, strided, deep, gap) or a spec file.
    #[arg(long)]
    pub spec: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Held-out data for the reported test accuracy (MNIST defaults to its test split).
    #[arg(long)]
    pub test_dataset: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub surrogate: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Drop images the surrogate already misclassifies.
    #[arg(long)]
    pub filter: bool,
    /// mifgsm, cwt, dim, sim or bsr.
    #[arg(long, default_value = "cwt")]
    pub attack: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub flags: AttackFlags,
    /// Per-iteration loss and L-inf distance as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Adversarial batch, TNSR `[B, C, H, W]`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub surrogate: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub targets: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, num_args = 1.., default_values = ["mifgsm", "cwt"])]
    pub attack: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub flags: AttackFlags,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SweepArgs {
    /// blocks, smax, rot-max, rot-k, copies or pre-interp.
    #[arg(long)]
    pub param: String,
    #[arg(long, num_args = 1.., required = true)]
    pub values: Vec<String>,
    #[arg(long)]
    pub surrogate: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub targets: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub flags: AttackFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// PGM/PPM or TNSR image; alternatively `--dataset` with `--index`.
    #[arg(long, conflicts_with = "dataset")]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "index")]
    pub dataset: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub index: Option<usize>,
    /// Class to explain (default: the predicted class).
    #[arg(long)]
    pub class: Option<usize>,
    /// Conv layer index (default: the last conv layer).
    #[arg(long)]
    pub layer: Option<usize>,
    /// `.pgm` writes the map; `.ppm` overlays it on the image.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CheckLinfArgs {
    /// Manifest of an `attack` run; supplies clean data, output and eps.
    #[arg(long, conflicts_with_all = ["clean", "adv"])]
    pub manifest: Option<PathBuf>,
    /// Clean batch as TNSR.
    #[arg(long, requires = "adv")]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub adv: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this path instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
