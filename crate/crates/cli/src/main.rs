//! `hima`: synthesize data, train, run inference, evaluate, profile and
//! check HiMA models from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hima_core::CoreError;

#[derive(Parser, Debug)]
#[command(name = "hima", version, about = "Low-light RAW-to-sRGB models: data, training, inference and reports")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Model configuration (JSON); defaults to the desk configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset root holding `train/` and `test/` splits.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Model configuration override, e.g. `--set loda=false --set widths=8,16,32,64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic low-light dataset under --data.
    Synth(SynthArgs),
    /// Train on the `train` split; writes weights, loss.csv and checkpoints to --out.
    Train(TrainArgs),
    /// Run a trained model on noisy PGM mosaics.
    Infer(InferArgs),
    /// PSNR/SSIM of a trained model over a split.
    Eval(EvalArgs),
    /// Parameter and multiply-accumulate counts.
    Profile(ProfileArgs),
    /// Known-target alignment ladder with error heatmaps.
    LodaDemo(LodaDemoArgs),
    /// Train and score ablation variants.
    Ablate(AblateArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub train_count: usize,
    #[arg(long, default_value_t = 4)]
    pub test_count: usize,
    /// Mosaic height in pixels.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Mosaic width in pixels.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Amplification ratios, cycled over the samples.
    #[arg(long, value_delimiter = ',', default_value = "100,250,300")]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub shot_gain: Option<f64>,
    #[arg(long)]
    pub read_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 2e-5)]
    pub lr_min: f64,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
    /// Checkpoint directory to continue from.
    #[arg(long, value_name = "DIR")]
    pub resume: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only the final one.
    #[arg(long, default_value_t = 200)]
    pub checkpoint_every: usize,
    /// Stop after this many steps without shortening the schedule.
    #[arg(long)]
    pub stop_at: Option<usize>,
    /// Disable flip/transpose augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub weights: PathBuf,
    /// Noisy mosaics (`<id>_noisy.pgm`); `<id>_meta.json` beside each supplies the ratio.
    #[arg(required = true, value_name = "PGM")]
    pub inputs: Vec<PathBuf>,
    /// Ratio used when no metadata file is present.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub weights: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Mosaic height in pixels.
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Mosaic width in pixels.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    /// Further configurations to list beside the loaded one (`all-lsb` or an ablation variant).
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<String>,
    /// Name depth at which the per-op breakdown is grouped.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct LodaDemoArgs {
    /// Pairs generated when --data is not given.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Mosaic size of generated pairs.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 4)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, value_delimiter = ',', default_value = "100,250,300")]
    pub ratios: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Variant or table names: table_modules, table_priors, table_hima, all.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Training pairs generated when --data is not given.
    #[arg(long, default_value_t = 8)]
    pub train_count: usize,
    #[arg(long, default_value_t = 4)]
    pub test_count: usize,
    /// Mosaic size of generated pairs.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub json: bool,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(CoreError),
    Check(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(CoreError::Config { .. }) => 1,
            Failure::Core(CoreError::Numerical { .. }) | Failure::Check(_) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Check(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = &cli.global;
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Infer(a) => commands::infer(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Profile(a) => commands::profile(g, a),
        Command::LodaDemo(a) => commands::loda_demo(g, a),
        Command::Ablate(a) => commands::ablate(g, a),
        Command::Selftest => commands::selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
