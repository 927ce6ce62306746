mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fakeguard_core::dataset::DatasetError;
use fakeguard_core::inspect::InspectError;
use fakeguard_core::model::ModelError;
use fakeguard_core::train::TrainError;

use config::{ModelChoice, PresetChoice, RunConfig};

#[derive(Parser)]
#[command(
    name = "fakeguard",
    version,
    about = "Deepfake video detection: data generation, training, prediction and inspection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic face-swap dataset
    Gendata(GendataArgs),
    /// Train on a dataset, holding out one stratified fold for validation
    Train(TrainArgs),
    /// Run stratified k-fold cross-validation
    Kfold(KfoldArgs),
    /// Print the fake probability of one or more videos
    Predict(PredictArgs),
    /// Render a conv layer's feature maps for one frame as a PPM grid
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GendataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    videos: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Square frame side in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the blended region as a fraction of the frame
    #[arg(long, default_value_t = 0.4)]
    blend_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// mini | full, optionally suffixed -resnet, -xception or -both
    #[arg(long)]
    preset: Option<PresetChoice>,
    /// fig2 | fig5: epochs, batch size and frame count in one go
    #[arg(long)]
    preset_run: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Videos per minibatch
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = ["adam", "sgd"])]
    optimizer: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Frames sampled per video
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// ResNet,Xception soft-vote weights, e.g. 1,1
    #[arg(long, value_parser = config::parse_ensemble_weights)]
    ensemble_weights: Option<fakeguard_core::model::EnsembleConfig>,
    /// Print the resolved configuration as JSON and exit
    #[arg(long)]
    print_config: bool,
}

impl TrainArgs {
    fn layers(&self) -> Result<(RunConfig, RunConfig), Failure> {
        let file = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            data: self.data.clone(),
            out: self.out.clone(),
            model: self.model,
            preset: self.preset,
            preset_run: self.preset_run.clone(),
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            optimizer: self.optimizer.as_deref().map(|o| match o {
                "sgd" => fakeguard_core::train::Optimizer::sgd(),
                _ => fakeguard_core::train::Optimizer::adam(),
            }),
            gamma: self.gamma,
            alpha: self.alpha,
            n_frames: self.frames,
            k_folds: self.k,
            seed: self.seed,
            ensemble: self.ensemble_weights,
        };
        Ok((file, flags))
    }
}

#[derive(Args)]
struct KfoldArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Run only this fold (repeatable); all folds by default
    #[arg(long)]
    fold: Vec<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    weights_resnet: Option<PathBuf>,
    #[arg(long)]
    weights_xception: Option<PathBuf>,
    #[arg(long, value_parser = config::parse_ensemble_weights)]
    ensemble_weights: Option<fakeguard_core::model::EnsembleConfig>,
    /// A video directory, or a directory whose subdirectories are videos
    #[arg(long)]
    video_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// mini | full; detected from the weight files when omitted
    #[arg(long)]
    preset: Option<PresetChoice>,
}

#[derive(Args)]
struct InspectArgs {
    /// Weight file; a freshly initialized model is used when omitted
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Backbone: resnet or xception (default resnet without weights)
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// mini | full; detected from the weight file when omitted
    #[arg(long)]
    preset: Option<PresetChoice>,
    /// Initialization seed when no weights are given
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PPM frame; resized to the model input when sizes differ
    #[arg(long)]
    frame: PathBuf,
    /// 1-based conv layer ordinal
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
}

/// A user-facing error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_WEIGHTS: u8 = 5;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(_) => Failure::config(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::InvalidSpec(_) | ModelError::LayerOutOfRange { .. } | ModelError::Ensemble(_) => EXIT_CONFIG,
            ModelError::Input(_) | ModelError::InputShape { .. } | ModelError::EmptyFrames => EXIT_DATA,
            ModelError::Tensor(_) => EXIT_NUMERIC,
            ModelError::FingerprintMismatch { .. }
            | ModelError::WeightsMismatch(_)
            | ModelError::Corrupt(_)
            | ModelError::Io { .. } => EXIT_WEIGHTS,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(e) => e.into(),
            TrainError::Model(e) => e.into(),
            TrainError::Config(_) | TrainError::KFold(_) => Failure::config(e.to_string()),
            TrainError::EmptySplit(_) => Failure::data(e.to_string()),
            TrainError::Metrics(_) | TrainError::Tensor(_) | TrainError::Divergence { .. } => {
                Failure::new(EXIT_NUMERIC, e.to_string())
            }
        }
    }
}

impl From<InspectError> for Failure {
    fn from(e: InspectError) -> Self {
        match e {
            InspectError::Model(e) => e.into(),
            _ => Failure::data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gendata(a) => commands::gendata(&a),
        Command::Train(a) => commands::train(&a),
        Command::Kfold(a) => commands::kfold(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
