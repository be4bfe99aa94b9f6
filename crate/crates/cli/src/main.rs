//! `fanpower`: synthesize fan recordings, extract spectral features, train
//! and evaluate the power-class network, and label new recordings.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fanpower::labeling::{BoundsPolicy, BoundsSource};
use fanpower::spectral::Approach;

#[derive(Parser)]
#[command(
    name = "fanpower",
    version,
    about = "Server power class from fan noise"
)]
struct Cli {
    /// More log output on stderr (repeat for per-epoch detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording and its power log.
    Synth(SynthArgs),
    /// Dump per-segment feature vectors as CSV.
    Extract(ExtractArgs),
    /// Train a model and score it on the held-out split.
    Train(TrainArgs),
    /// Score a model on a labelled recording.
    Eval(EvalArgs),
    /// Print one class label per segment of a recording.
    Predict(PredictArgs),
    /// Both feature approaches on a clean and a noisy recording.
    ExperimentMatrix(MatrixArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSON synthesis config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub segments: Option<u64>,
    /// Seconds per segment (one power reading each).
    #[arg(long)]
    pub segment_s: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(5..=7))]
    pub blades: Option<u32>,
    /// Fan speed range as MIN:MAX.
    #[arg(long, value_parser = parse_pair)]
    pub rpm_range: Option<(f64, f64)>,
    /// Overtones above the blade-pass tone.
    #[arg(long)]
    pub harmonics: Option<usize>,
    /// Wattage range mapped onto the rpm range, as MIN:MAX.
    #[arg(long, value_parser = parse_pair)]
    pub power_range: Option<(f64, f64)>,
    /// Discrete wattage levels, comma separated. Without this the wattage
    /// follows a random walk.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Relative share of segments per level.
    #[arg(long, value_delimiter = ',', requires = "levels")]
    pub level_weights: Option<Vec<f64>>,
    /// Uniform jitter added to each level reading, in watts.
    #[arg(long, requires = "levels")]
    pub jitter_w: Option<f64>,
    #[arg(long)]
    pub ac_level: Option<f64>,
    #[arg(long)]
    pub ac_cutoff: Option<f64>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Add a second fan running at a fixed speed.
    #[arg(long)]
    pub extra_tenant: bool,
    #[arg(long, requires = "extra_tenant")]
    pub tenant_rpm: Option<f64>,
    #[arg(long, requires = "extra_tenant")]
    pub tenant_blades: Option<u32>,
    #[arg(long, requires = "extra_tenant")]
    pub tenant_level: Option<f64>,
    #[arg(long, env = "FANPOWER_SEED")]
    pub seed: Option<u64>,
    /// Writes PREFIX.wav, PREFIX.csv and PREFIX.json.
    #[arg(long, default_value = "synth")]
    pub out_prefix: String,
    /// Write 32-bit float samples instead of 16-bit PCM.
    #[arg(long)]
    pub float: bool,
}

#[derive(Args)]
pub struct InputArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub power_csv: PathBuf,
    /// Reading interval in seconds, required for single-column power files.
    #[arg(long)]
    pub interval_s: Option<f64>,
    /// Seconds of audio before the first reading's window.
    #[arg(long, allow_hyphen_values = true)]
    pub offset_s: Option<f64>,
}

#[derive(Args)]
pub struct FeatureArgs {
    #[arg(long, value_parser = parse_approach)]
    pub approach: Option<Approach>,
    /// Analysis band as LOW:HIGH in Hz.
    #[arg(long, value_parser = parse_pair)]
    pub band: Option<(f64, f64)>,
    /// Pooling bin width in Hz for the reduced approach.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Apply a Hann window before the transform.
    #[arg(long)]
    pub taper: bool,
}

#[derive(Args)]
pub struct TrainingArgs {
    /// JSON pipeline config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub goal_error: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initial weights are uniform in [-R, R].
    #[arg(long)]
    pub init_range: Option<f64>,
    /// Seed for weight initialisation and the train/test split.
    #[arg(long, env = "FANPOWER_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub stratified: bool,
    /// equal-width or equal-frequency.
    #[arg(long, value_parser = parse_policy)]
    pub bounds_policy: Option<BoundsPolicy>,
    /// Fit class bounds on all readings or the training readings only.
    #[arg(long, value_parser = parse_source)]
    pub bounds_source: Option<BoundsSource>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Training log; defaults to the model path with a `.log` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the held-out report as PREFIX.{json,txt,csv}.
    #[arg(long)]
    pub report_prefix: Option<String>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Score only the test part of the split the model was trained with.
    #[arg(long)]
    pub heldout: bool,
    /// Writes PREFIX.json, PREFIX.txt and PREFIX.csv.
    #[arg(long, default_value = "report")]
    pub report_prefix: String,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    /// Segment length in seconds; defaults to the model's.
    #[arg(long)]
    pub segment_s: Option<f64>,
}

#[derive(Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub clean_wav: PathBuf,
    #[arg(long)]
    pub clean_csv: PathBuf,
    #[arg(long)]
    pub noisy_wav: PathBuf,
    #[arg(long)]
    pub noisy_csv: PathBuf,
    #[arg(long)]
    pub interval_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset_s: Option<f64>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Writes PREFIX.json and PREFIX.txt.
    #[arg(long, default_value = "matrix")]
    pub report_prefix: String,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
        return Err(format!("range {a}:{b} is empty"));
    }
    Ok((a, b))
}

fn parse_approach(s: &str) -> Result<Approach, String> {
    s.parse().map_err(|e: fanpower::Error| e.to_string())
}

// The enums' serde names double as their flag spellings.
fn parse_policy(s: &str) -> Result<BoundsPolicy, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| "expected equal-width or equal-frequency".into())
}

fn parse_source(s: &str) -> Result<BoundsSource, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| "expected all or train".into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::ExperimentMatrix(a) => commands::experiment_matrix(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.family().exit_code() as u8)
        }
    }
}
