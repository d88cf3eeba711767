//! `afflow`: generate data, train weights and predictors, label images, check gradients.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use afflow_core::data::ScenarioKind;
use afflow_core::gradient::check::Reference;
use afflow_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "afflow", version, about = "Image labeling with learned linearized assignment flows")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "AFFLOW_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic Voronoi images, ground truth and a manifest.
    Generate(GenerateArgs),
    /// Learn weight patches on a dataset.
    Train(TrainArgs),
    /// Label one image with stored or uniform weights.
    Label(LabelArgs),
    /// Compare the closed-form gradient with a reference, pixel by pixel.
    GradCheck(GradCheckArgs),
    /// Train a prototype-based weight predictor.
    PredictTrain(PredictTrainArgs),
    /// Label one image with predicted weights.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    /// Image side length.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    /// Gaussian noise level.
    #[arg(long, conflicts_with = "calibrate")]
    pub noise: Option<f64>,
    /// Chooses the noise level that gives this pixelwise nearest-label error (percent).
    #[arg(long)]
    pub calibrate: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV trace path (defaults to the output path with a `.csv` extension).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Continues from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Sample values stored as 0 and maxval (read from the dataset manifest when present).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    /// Label palette when no manifest is available.
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    /// Ground-truth label map; the manifest entry is used when omitted.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long, required_unless_present = "uniform", conflicts_with = "uniform")]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub uniform: bool,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub labels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fd", value_parser = ["fd", "dense"])]
    pub mode: String,
    #[arg(long, default_value_t = afflow_core::data::DEFAULT_LINES_NOISE)]
    pub noise: f64,
    #[arg(long, default_value_t = 4)]
    pub cells: usize,
    /// Leaves out the separate b-column term of the gradient.
    #[arg(long)]
    pub no_second_summand: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictTrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset for the validation curve.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV trace path (defaults to the output path with a `.csv` extension).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub prototypes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Also writes the predicted weight field.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

impl GradCheckArgs {
    pub fn reference(&self) -> Reference {
        self.mode.parse().unwrap_or_default()
    }
}

/// 2 for bad input or configuration, 3 for numerical failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::Numeric(_) | Error::Domain(_) | Error::Budget { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Label(a) => commands::label(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::PredictTrain(a) => commands::predict_train(a),
        Command::Predict(a) => commands::predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
