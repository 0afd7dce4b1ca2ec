//! End-to-end synthetic run: hard-mode scenes, a tiny U-Net, temperature
//! calibration and a paired comparison against the morphological baseline.

use carbseg::calibration::{fit_temperature, CalibrationModel};
use carbseg::classical::{baseline_segment, BaselineConfig};
use carbseg::evaluation::{compare_methods, tile_dices, Comparison, DEFAULT_ALPHA};
use carbseg::fsutil;
use carbseg::imagecore::{tile, AugmentationSpec, TileSet};
use carbseg::rng::derive_seed;
use carbseg::synthdata::{generate_scene, Scene, SceneConfig};
use carbseg::tensornet::{save_checkpoint, UNetConfig};
use carbseg::training::{predict_image, train, PredictOptions, TrainConfig, TrainReport};
use carbseg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::ReproArgs;
use crate::commands::{tile_logits, write_json};
use crate::par;

pub const SCENE_SIZE: usize = 256;
pub const TILE_SIZE: usize = 64;
pub const TRAIN_SCENES: usize = 4;
pub const VAL_SCENES: usize = 1;
pub const TEST_SCENES: usize = 8;
pub const CALIBRATION_BINS: usize = 10;

/// Machine-readable result of a run. Contains no timings or paths, so a fixed
/// seed gives the same bytes on one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproSummary {
    pub seed: u64,
    pub unet_dice_median: f64,
    pub baseline_dice_median: f64,
    pub wilcoxon_p: Option<f64>,
    pub reject: Option<bool>,
    pub paired_tiles: usize,
    pub temperature: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub parameters: usize,
}

pub struct ReproOutcome {
    pub summary: ReproSummary,
    pub comparison: Comparison,
    pub calibration: CalibrationModel,
    pub report: TrainReport,
    pub net: carbseg::tensornet::UNet<f32>,
}

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        unet: UNetConfig {
            encoder_blocks: 1,
            base_features: 8,
            ..UNetConfig::default()
        },
        lr0: 1e-2,
        batch_size: 8,
        max_epochs: 50,
        seed,
        augmentation: AugmentationSpec::default(),
        ..TrainConfig::default()
    }
}

fn scenes(seed: u64, range: std::ops::Range<usize>) -> Result<Vec<Scene>> {
    range
        .map(|i| generate_scene(&SceneConfig::hard().with_size(SCENE_SIZE, SCENE_SIZE).with_seed(derive_seed(seed, i as u64))))
        .collect()
}

fn tiles_of(scenes: &[Scene], offset: usize) -> Result<TileSet> {
    let mut set = TileSet { tile_size: TILE_SIZE, tiles: Vec::new() };
    for (i, s) in scenes.iter().enumerate() {
        set.extend(tile(&s.pair, &s.mask, TILE_SIZE, &format!("scene_{:03}", offset + i))?)?;
    }
    Ok(set)
}

/// Run the pipeline in memory.
pub fn pipeline(seed: u64, threads: usize) -> Result<ReproOutcome> {
    let scene_seed = derive_seed(seed, 0);
    let n_fit = TRAIN_SCENES + VAL_SCENES;
    let train_set = tiles_of(&scenes(scene_seed, 0..TRAIN_SCENES)?, 0)?;
    let val_set = tiles_of(&scenes(scene_seed, TRAIN_SCENES..n_fit)?, TRAIN_SCENES)?;
    let test = scenes(scene_seed, n_fit..n_fit + TEST_SCENES)?;

    let cfg = train_config(derive_seed(seed, 1));
    let out = train(&train_set, &val_set, &cfg)?;
    log::info!("trained: best epoch {} val dice {:.4}", out.report.best_epoch, out.report.best_val_dice);

    let (logits, targets) = tile_logits(&out.net, &val_set, cfg.eval_batch_size)?;
    let calibration = fit_temperature(&logits, &targets, CALIBRATION_BINS)?;

    let opts = PredictOptions {
        tile_size: TILE_SIZE,
        temperature: Some(calibration.temperature),
        batch_size: cfg.eval_batch_size,
    };
    let baseline_cfg = BaselineConfig::default();
    let per_scene = par::map(&test, threads, |s| {
        let unet = predict_image(&out.net, &s.pair, &opts)?;
        let base = baseline_segment(&s.pair, &baseline_cfg)?;
        Ok((tile_dices(&unet.mask, &s.mask, TILE_SIZE)?, tile_dices(&base, &s.mask, TILE_SIZE)?))
    })?;
    let (mut unet, mut base) = (Vec::new(), Vec::new());
    for (u, b) in per_scene {
        unet.extend(u);
        base.extend(b);
    }
    let comparison = compare_methods(&unet, &base, DEFAULT_ALPHA)?;
    let summary = ReproSummary {
        seed,
        unet_dice_median: comparison.a.median,
        baseline_dice_median: comparison.b.median,
        wilcoxon_p: comparison.test.as_ref().map(|t| t.p_value),
        reject: comparison.test.as_ref().map(|t| t.reject),
        paired_tiles: comparison.pairs.len(),
        temperature: calibration.temperature,
        ece_before: calibration.ece_before,
        ece_after: calibration.ece_after,
        best_epoch: out.report.best_epoch,
        best_val_dice: out.report.best_val_dice,
        parameters: out.report.parameters,
    };
    Ok(ReproOutcome {
        summary,
        comparison,
        calibration,
        report: out.report,
        net: out.net,
    })
}

/// `repro` subcommand: run the pipeline and write its artifacts under `out`.
pub fn run(a: ReproArgs, threads: usize) -> Result<Value> {
    let r = pipeline(a.seed, threads)?;
    fsutil::create_dir_all(&a.out)?;
    save_checkpoint(&r.net, &a.out.join("checkpoint.bin"), serde_json::json!({ "repro_seed": a.seed }))?;
    fsutil::write_atomic(a.out.join("report.csv"), r.report.to_csv().as_bytes())?;
    fsutil::write_atomic(a.out.join("pairs.csv"), r.comparison.to_csv().as_bytes())?;
    write_json(&a.out.join("calibration.json"), &r.calibration)?;
    write_json(&a.out.join("summary.json"), &r.summary)?;
    serde_json::to_value(&r.summary).map_err(|e| Error::Format(e.to_string()))
}
