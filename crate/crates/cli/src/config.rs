use std::path::{Path, PathBuf};

use carbseg::calibration::McSampling;
use carbseg::classical::BaselineConfig;
use carbseg::evaluation::{MorphometricsOptions, DEFAULT_ALPHA};
use carbseg::imagecore::AugmentationSpec;
use carbseg::tensornet::{AdamConfig, UNetConfig};
use carbseg::training::{PredictOptions, TrainConfig};
use carbseg::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a pipeline run needs. Every section is optional in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub tiling: TilingSection,
    pub unet: UNetConfig,
    pub training: TrainingSection,
    pub augmentation: AugmentationSpec,
    pub baseline: BaselineConfig,
    pub calibration: CalibrationSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory with `dataset.json`.
    pub images: Option<PathBuf>,
    /// Directory with `train/`, `val/` and `test/` tile sets.
    pub splits: Option<PathBuf>,
    /// Rows removed from the top and bottom of every image.
    pub crop_top: usize,
    pub crop_bottom: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingSection {
    pub tile_size: usize,
    /// Train, validation and test shares.
    pub fractions: (f64, f64, f64),
    pub split_seed: u64,
    /// Keep all tiles of one image in one partition.
    pub by_source: bool,
}

impl Default for TilingSection {
    fn default() -> Self {
        TilingSection {
            tile_size: 128,
            fractions: (0.8, 0.1, 0.1),
            split_seed: 0,
            by_source: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dice_smooth: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub mc_samples: usize,
    pub mc_sampling: McSampling,
    pub eval_batch_size: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            lr0: t.lr0,
            lr_decay_factor: t.lr_decay_factor,
            lr_patience: t.lr_patience,
            early_stop_patience: t.early_stop_patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            dice_smooth: t.dice_smooth,
            seed: t.seed,
            adam: t.adam,
            mc_samples: t.mc_samples,
            mc_sampling: t.mc_sampling,
            eval_batch_size: t.eval_batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub bins: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection { bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub alpha: f64,
    /// Grid for per-tile Dice scores.
    pub tile_size: usize,
    pub pixel_size_nm: Option<f64>,
    pub morphometrics: MorphometricsOptions,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            alpha: DEFAULT_ALPHA,
            tile_size: 128,
            pixel_size_nm: None,
            morphometrics: MorphometricsOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = carbseg::fsutil::read(path)?;
        let text = String::from_utf8(text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            unet: self.unet.clone(),
            lr0: t.lr0,
            lr_decay_factor: t.lr_decay_factor,
            lr_patience: t.lr_patience,
            early_stop_patience: t.early_stop_patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            dice_smooth: t.dice_smooth,
            seed: t.seed,
            augmentation: self.augmentation.clone(),
            adam: t.adam,
            mc_samples: t.mc_samples,
            mc_sampling: t.mc_sampling,
            eval_batch_size: t.eval_batch_size,
        }
    }

    pub fn predict_options(&self) -> PredictOptions {
        PredictOptions {
            tile_size: self.tiling.tile_size,
            temperature: None,
            batch_size: self.training.eval_batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.baseline.validate()?;
        if self.tiling.tile_size == 0 || self.evaluation.tile_size == 0 {
            return Err(Error::InvalidArgument("tile sizes must be at least 1".into()));
        }
        let (a, b, c) = self.tiling.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions {a},{b},{c} must be positive and sum to 1")));
        }
        if self.calibration.bins < 2 {
            return Err(Error::InvalidArgument("calibration.bins must be at least 2".into()));
        }
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return Err(Error::InvalidArgument("evaluation.alpha must lie in (0, 1)".into()));
        }
        if let Some(px) = self.evaluation.pixel_size_nm {
            if !(px > 0.0) {
                return Err(Error::InvalidArgument("evaluation.pixel_size_nm must be positive".into()));
            }
        }
        Ok(())
    }
}
