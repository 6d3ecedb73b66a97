use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "apcen", version, about = "Adaptive PCEN audio front-end")]
pub struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` config file; flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute normalized feature maps for WAV files
    Extract(ExtractArgs),
    /// Build a complex-condition corpus, or perturb a single clip
    Augment(AugmentArgs),
    /// Generate the synthetic AM-tone classification task
    SynthTask(SynthTaskArgs),
    /// Train a front-end variant with the toy classifier
    Train(TrainArgs),
    /// Windowed top-1 accuracy of a model checkpoint
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Write the adaptive gain map and exponent trajectory of a clip
    InspectGain(InspectGainArgs),
    /// Describe the front-end, or a checkpoint
    Info(InfoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Bin,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Fixed,
    Pcen,
    SimpPcen,
    Apcen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Clean,
    Babble,
    Music,
    Loudness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Clean,
    Complex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModuleArg {
    All,
    Pcen,
    Simp,
    Controller,
    E2e,
}

/// Front-end geometry; defaults apply unless a checkpoint fixes them.
#[derive(Args, Debug, Default)]
pub struct FrontendArgs {
    /// Number of Gabor filters [default: 40]
    #[arg(long)]
    pub n_filters: Option<usize>,
    /// Gabor and pooling kernel length in samples, made odd [default: 150]
    #[arg(long)]
    pub kernel_len: Option<usize>,
    /// Frame hop in samples [default: 160]
    #[arg(long)]
    pub hop: Option<usize>,
    /// Lowest filter band edge in Hz [default: 0]
    #[arg(long)]
    pub f_min: Option<f64>,
    /// Highest filter band edge in Hz [default: 8000]
    #[arg(long)]
    pub f_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// WAV file or directory of WAV files
    #[arg(long)]
    pub input: PathBuf,
    /// Normalization variant [default: fixed]
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Model (APCM) or controller (APCC) checkpoint; required unless the variant is fixed
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file, or directory when the input is a directory
    #[arg(long)]
    pub out: PathBuf,
    /// Output format [default: bin]
    #[arg(long, value_enum)]
    pub format: Option<OutFormat>,
    #[command(flatten)]
    pub frontend: FrontendArgs,
}

/// Perturbation constants shared by both augment modes.
#[derive(Args, Debug, Default)]
pub struct AugmentSpecArgs {
    /// Lowest mixing SNR in dB [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub snr_min: Option<f64>,
    /// Highest mixing SNR in dB [default: 15]
    #[arg(long, allow_hyphen_values = true)]
    pub snr_max: Option<f64>,
    /// Speech sources summed into babble [default: 3]
    #[arg(long)]
    pub babble_sources: Option<usize>,
    /// Lowest segment gain in dB [default: -8]
    #[arg(long, allow_hyphen_values = true)]
    pub gain_min: Option<f64>,
    /// Highest segment gain in dB [default: 8]
    #[arg(long, allow_hyphen_values = true)]
    pub gain_max: Option<f64>,
    /// Loudness segment length in ms [default: 250]
    #[arg(long)]
    pub segment_ms: Option<f64>,
    /// Lower segment level bound in dBFS [default: -40]
    #[arg(long, allow_hyphen_values = true)]
    pub spl_min: Option<f64>,
    /// Upper segment level bound in dBFS [default: -15]
    #[arg(long, allow_hyphen_values = true)]
    pub spl_max: Option<f64>,
    /// Crossfade between segment gains in ms [default: 5]
    #[arg(long)]
    pub crossfade_ms: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Manifest to perturb into a corpus (path,label,split[,condition])
    #[arg(long, conflicts_with_all = ["input", "condition"])]
    pub manifest: Option<PathBuf>,
    /// Single WAV to perturb
    #[arg(long, requires = "condition")]
    pub input: Option<PathBuf>,
    /// Condition applied to --input
    #[arg(long, value_enum)]
    pub condition: Option<ConditionArg>,
    /// Noise pool directory with speech/ and music/ subdirectories [default: synthetic pool]
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Output directory (corpus mode) or WAV file (single-clip mode)
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub spec: AugmentSpecArgs,
}

#[derive(Args, Debug)]
pub struct SynthTaskArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Clean corpus or equal quarters of the four conditions [default: clean]
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Training clips per class [default: 40]
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// Validation clips per class [default: 10]
    #[arg(long)]
    pub val_per_class: Option<usize>,
    /// Test clips per class [default: 10]
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Train and validation clip length in seconds [default: 1]
    #[arg(long)]
    pub train_seconds: Option<f64>,
    /// Test clip length in seconds [default: 2]
    #[arg(long)]
    pub test_seconds: Option<f64>,
    /// Noise pool for the complex profile [default: synthetic pool]
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for history.csv and best.ckpt
    #[arg(long)]
    pub out: PathBuf,
    /// Variant to train [default: apcen]
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.003]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay [default: 0.0001]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Training crop length in seconds [default: 1]
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    /// Controller GRU width [default: 8]
    #[arg(long)]
    pub controller_hidden: Option<usize>,
    /// Controller MLP width [default: 8]
    #[arg(long)]
    pub controller_mlp_hidden: Option<usize>,
    /// Classifier hidden width [default: 64]
    #[arg(long)]
    pub backend_hidden: Option<usize>,
    /// Truncate backpropagation through time every this many frames [default: none]
    #[arg(long)]
    pub bptt_window: Option<usize>,
    #[command(flatten)]
    pub frontend: FrontendArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split to score [default: test]
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Inference window in seconds [default: 1]
    #[arg(long)]
    pub window_seconds: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Gradient suite [default: all]
    #[arg(long, value_enum)]
    pub module: Option<ModuleArg>,
    /// Random instances per suite [default: 50]
    #[arg(long)]
    pub instances: Option<usize>,
    /// Finite-difference step [default: 1e-6]
    #[arg(long)]
    pub step: Option<f64>,
    /// Corrupt the analytic gradients (negative control)
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Args, Debug)]
pub struct InspectGainArgs {
    /// WAV file
    #[arg(long)]
    pub input: PathBuf,
    /// Adaptive model (APCM) or controller (APCC) checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gain CSV, frames × channels
    #[arg(long)]
    pub out: PathBuf,
    /// Exponent trajectory CSV, α̂ columns then γ̂ columns [default: <out>_trajectory.csv]
    #[arg(long)]
    pub trajectory_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// Checkpoint to describe
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub frontend: FrontendArgs,
}
