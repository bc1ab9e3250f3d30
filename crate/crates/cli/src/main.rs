//! `cchp`: generate synthetic gesture corpora, train and evaluate handling
//! policies, and run online inference.

mod data;
mod evaluate;
mod infer;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use cchp_core::domain::{DEFAULT_CLIP_FRAMES, DEFAULT_RATE_HZ};
use cchp_core::eval::{DEFAULT_WINDOW_S, SIGMA_R_RAD, SIGMA_T_M};
use cchp_core::models::ModelKind;
use cchp_core::trainer::TeacherSchedule;
use cchp_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cchp", version, about = "Gesture-to-velocity handling policies conditioned on user demonstrations")]
struct Cli {
    /// Seed for every randomized step [default: 0, or the config file's seed for training]
    #[arg(long, global = true, env = "CCHP_SEED")]
    seed: Option<u64>,
    /// Maximum number of worker threads [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with its style and split manifests
    GenData(GenDataArgs),
    /// Test each user's demonstrations for within-label consistency
    CheckConsistency(CheckArgs),
    /// Train one model on the corpus's training split
    Train(TrainArgs),
    /// Score checkpoints and baselines on the test settings
    Eval(EvalArgs),
    /// Predict operations for a gesture sequence given a context
    Infer(InferArgs),
    /// Train and evaluate a sweep over one training probability
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Output corpus directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of users in the training population
    #[arg(long, default_value_t = 10)]
    pub in_sample: usize,
    /// Number of users seen only at test time
    #[arg(long, default_value_t = 5)]
    pub out_sample: usize,
    /// Frame rate in Hz
    #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
    pub rate: f64,
    /// Frames per clip
    #[arg(long, default_value_t = DEFAULT_CLIP_FRAMES)]
    pub clip_frames: usize,
    /// Extra in-sample users whose every clip uses an unrelated style
    #[arg(long, default_value_t = 0)]
    pub shuffled_users: usize,
}

#[derive(Args)]
pub struct CheckArgs {
    /// Corpus directory
    #[arg(long)]
    pub corpus: PathBuf,
    /// Only test this user
    #[arg(long)]
    pub user: Option<String>,
}

/// Training settings that override the config file.
#[derive(Args, Clone, Default)]
pub struct TrainOverrides {
    /// TOML training config; flags below override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Episodes per gradient work unit
    #[arg(long)]
    pub micro_batch: Option<usize>,
    /// Probability that the context contains the target's motion
    #[arg(long)]
    pub p_m: Option<f64>,
    /// Initial teacher-forcing probability
    #[arg(long)]
    pub p_tf_init: Option<f64>,
    /// Steps before the teacher-forcing probability starts to decay
    #[arg(long)]
    pub p_tf_hold: Option<usize>,
    /// `decay` or `constant`
    #[arg(long, value_parser = parse_schedule)]
    pub p_tf_schedule: Option<TeacherSchedule>,
    /// Variance of the Gaussian noise added to training gestures
    #[arg(long)]
    pub noise_variance: Option<f64>,
    /// Clips per training context
    #[arg(long)]
    pub context_clips: Option<usize>,
    /// Write a checkpoint every N steps (0 disables)
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

fn parse_schedule(s: &str) -> std::result::Result<TeacherSchedule, String> {
    match s {
        "decay" => Ok(TeacherSchedule::Decay),
        "constant" => Ok(TeacherSchedule::Constant),
        _ => Err(format!("expected `decay` or `constant`, got `{s}`")),
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus directory holding a split manifest
    #[arg(long)]
    pub corpus: PathBuf,
    /// `cchp`, `lstm` or `ranp`
    #[arg(long)]
    pub model: ModelKind,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV [default: the checkpoint path with a `.loss.csv` extension]
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

/// Evaluation settings shared by `eval` and `ablate`.
#[derive(Args, Clone)]
pub struct EvalFlags {
    /// Comma-separated settings (`matching`, `mismatching`, `new-user`, `noisy`) or `all`
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub settings: Vec<String>,
    /// Clips per evaluation context
    #[arg(long, default_value_t = 4)]
    pub eval_context_clips: usize,
    /// Sample the latent variable instead of using its posterior mean
    #[arg(long)]
    pub sample_latent: bool,
    /// Translation noise scale of the noisy setting, in meters
    #[arg(long, default_value_t = SIGMA_T_M)]
    pub sigma_t: f64,
    /// Rotation noise scale of the noisy setting, in radians
    #[arg(long, default_value_t = SIGMA_R_RAD)]
    pub sigma_r: f64,
    /// Window of the cumulative rotation error, in seconds
    #[arg(long, default_value_t = DEFAULT_WINDOW_S)]
    pub window: f64,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Corpus directory holding a split manifest
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated checkpoint paths, optionally `label=path`; `mc` and
    /// `oracle` select motion cloning and the generator inverse
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoints: Vec<String>,
    /// Results CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Cumulative error histogram CSV [default: next to the results, suffixed `_cumulative`]
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Histogram bin width in degrees
    #[arg(long, default_value_t = 2.0)]
    pub bin_deg: f64,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Args)]
pub struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Context demonstrations as clip records, one JSON object per line
    #[arg(long)]
    pub context: PathBuf,
    /// Gesture frames as `{"t": seconds, "keypoints": [63 values]}`, one per
    /// line (`-` reads standard input)
    #[arg(long)]
    pub gestures: PathBuf,
    /// Operations CSV (`-` writes standard output)
    #[arg(long)]
    pub out: PathBuf,
    /// Write each prediction before reading the next frame
    #[arg(long)]
    pub stream: bool,
    /// Write the attention weights as an N_T x N_C CSV matrix
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Sample the latent variable instead of using its posterior mean
    #[arg(long)]
    pub sample_latent: bool,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Corpus directory holding a split manifest
    #[arg(long)]
    pub corpus: PathBuf,
    /// `p_m` or `p_tf`, optionally with values such as `p_m:0.1,0.5,1.0`
    #[arg(long)]
    pub sweep: String,
    /// Output directory for checkpoints, histories and the combined table
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub eval: EvalFlags,
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("--jobs: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::GenData(a) => data::gen_data(&a, seed.unwrap_or(0)),
        Command::CheckConsistency(a) => data::check_consistency(&a),
        Command::Train(a) => train::train(&a, seed),
        Command::Eval(a) => evaluate::eval(&a, seed.unwrap_or(0)),
        Command::Infer(a) => infer::infer(&a, seed.unwrap_or(0)),
        Command::Ablate(a) => train::ablate(&a, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(2)
        }
    }
}
