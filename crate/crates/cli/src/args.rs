use std::path::PathBuf;

use carbseg::training::Objective;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "carbseg", version, about = "Carbide segmentation of two-channel SEM micrographs")]
pub struct Cli {
    /// Worker threads for per-image work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic scenes with exact masks.
    Generate(GenerateArgs),
    /// Cut a dataset into square tiles.
    Tile(TileArgs),
    /// Partition a tile set into train/val/test.
    Split(SplitArgs),
    /// Segment a dataset with the morphological baseline.
    Baseline(BaselineArgs),
    /// Train a U-Net on split tiles.
    Train(TrainArgs),
    /// Segment a dataset with a trained network.
    Predict(PredictArgs),
    /// Fit a temperature on validation tiles.
    Calibrate(CalibrateArgs),
    /// Reliability diagram of a network on a tile set.
    Reliability(ReliabilityArgs),
    /// Per-tile Dice of predicted masks against targets.
    Evaluate(EvaluateArgs),
    /// Paired signed-rank comparison of two Dice tables.
    Compare(CompareArgs),
    /// Particle morphometrics of a mask.
    Quantify(QuantifyArgs),
    /// Random hyperparameter search.
    Hpo(HpoArgs),
    /// Run the whole synthetic pipeline end to end.
    Repro(ReproArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Scene parameters (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the high-overlap preset.
    #[arg(long)]
    pub hard: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TileArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (with dataset.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tile_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tile directory written by `tile`.
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train,val,test shares, e.g. 0.8,0.1,0.1.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub by_source: bool,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding `train/` and `val/` tile sets.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TemperatureArgs {
    /// Fixed temperature.
    #[arg(long, conflicts_with = "calibration")]
    pub temperature: Option<f64>,
    /// Calibration file written by `calibrate`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[command(flatten)]
    pub temperature: TemperatureArgs,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Validation tile directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
    #[command(flatten)]
    pub temperature: TemperatureArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with `<id>_pred.png` masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory with the target masks.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tile_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = carbseg::evaluation::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Paired per-tile table.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QuantifyArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub pixel_size_nm: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    pub bin_width_nm: f64,
    #[arg(long, default_value_t = 500.0)]
    pub large_ecd_nm: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ObjectiveArg {
    ValLoss,
    ValDice,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Objective {
        match o {
            ObjectiveArg::ValLoss => Objective::ValLoss,
            ObjectiveArg::ValDice => Objective::ValDice,
        }
    }
}

#[derive(Args, Debug)]
pub struct HpoArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Search space (TOML).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "val-loss")]
    pub objective: ObjectiveArg,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

