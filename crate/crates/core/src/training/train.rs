use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{dice_loss, dice_loss_logits};
use super::schedule::PlateauController;
use crate::calibration::{mve_mc_dice_loss, McSampling, DEFAULT_MC_SAMPLES};
use crate::error::{invalid, Error, Result};
use crate::evaluation::Confusion;
use crate::imagecore::{augment, AugmentationSpec, Tile, TileSet};
use crate::rng::{derive_seed, stream_rng};
use crate::tensornet::layers::sigmoid;
use crate::tensornet::{adam_step, build_unet, AdamConfig, Tensor4D, UNet, UNetConfig};

const SEED_INIT: u64 = 0;
const SEED_SHUFFLE: u64 = 1;
const SEED_AUGMENT: u64 = 2;
const SEED_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub unet: UNetConfig,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Smoothing term of the Dice loss.
    pub dice_smooth: f64,
    pub seed: u64,
    pub augmentation: AugmentationSpec,
    pub adam: AdamConfig,
    /// Monte-Carlo samples per step when the network has a variance head.
    pub mc_samples: usize,
    pub mc_sampling: McSampling,
    /// Tiles per forward pass during validation and inference.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            unet: UNetConfig::default(),
            lr0: 2e-4,
            lr_decay_factor: 0.5,
            lr_patience: 7,
            early_stop_patience: 14,
            batch_size: 32,
            max_epochs: 200,
            dice_smooth: 1e-6,
            seed: 0,
            augmentation: AugmentationSpec::default(),
            adam: AdamConfig::default(),
            mc_samples: DEFAULT_MC_SAMPLES,
            mc_sampling: McSampling::default(),
            eval_batch_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.augmentation.validate()?;
        self.adam.validate()?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(invalid!("lr_decay_factor must lie in (0, 1), got {}", self.lr_decay_factor));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(invalid!("patience values must be at least 1"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(invalid!("batch sizes must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(invalid!("max_epochs must be at least 1"));
        }
        if !(self.dice_smooth >= 0.0) {
            return Err(invalid!("dice_smooth must be non-negative"));
        }
        if self.unet.out_channels != 1 {
            return Err(invalid!("training supports a single foreground class (out_channels = 1)"));
        }
        if self.mc_samples == 0 {
            return Err(invalid!("mc_samples must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStop {
    EarlyStopping,
    MaxEpochs,
    /// A loss or gradient became non-finite; the best earlier state is kept.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_dice: f64,
    pub stop: TrainStop,
    /// Set when the non-finite stop fired.
    pub failure: Option<String>,
    /// Where the best state was written, if it was.
    pub checkpoint: Option<String>,
    pub parameters: usize,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,val_dice,lr` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_dice,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_dice, e.lr));
        }
        s
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

pub struct TrainOutcome {
    /// State at the epoch with the lowest validation loss.
    pub net: UNet<f32>,
    pub report: TrainReport,
}

/// Pack tiles into an `(n, 2, s, s)` input tensor and flat 0/1 targets.
pub fn batch_tensors<'a>(tiles: impl IntoIterator<Item = &'a Tile>) -> Result<(Tensor4D<f32>, Vec<f32>)> {
    let mut input = Vec::new();
    let mut target = Vec::new();
    let mut n = 0;
    let mut size = None;
    for t in tiles {
        if *size.get_or_insert(t.size()) != t.size() {
            return Err(Error::ShapeMismatch("tiles in one batch differ in size".into()));
        }
        input.extend_from_slice(t.input());
        target.extend(t.target.data().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        n += 1;
    }
    let s = size.ok_or_else(|| invalid!("empty batch"))?;
    Ok((Tensor4D::new([n, 2, s, s], input)?, target))
}

fn check_tiles(name: &str, set: &TileSet, cfg: &UNetConfig) -> Result<()> {
    if set.is_empty() {
        return Err(invalid!("{name} split is empty"));
    }
    let m = cfg.size_multiple();
    if set.tile_size % m != 0 || set.tile_size == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{name} tile size {} is not divisible by 2^{} = {m}",
            set.tile_size, cfg.encoder_blocks
        )));
    }
    Ok(())
}

/// Validation metrics in evaluation mode: soft Dice loss and hard Dice
/// (threshold 0.5), each pooled over every pixel of the set.
pub fn evaluate_tiles(net: &UNet<f32>, set: &TileSet, batch_size: usize, eps: f64) -> Result<(f64, f64)> {
    let mut probs = Vec::new();
    let mut targets = Vec::new();
    let mut confusion = Confusion::default();
    for chunk in set.tiles.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors(chunk)?;
        let z = net.forward_eval(&x)?;
        let plane = z.plane();
        for i in 0..z.n() {
            let logits = z.channel(i, 0);
            let ys = &y[i * plane..(i + 1) * plane];
            for (&l, &t) in logits.iter().zip(ys) {
                probs.push(sigmoid(l as f64) as f32);
                confusion.add(l >= 0.0, t == 1.0);
            }
            targets.extend_from_slice(ys);
        }
    }
    Ok((dice_loss(&probs, &targets, eps)?, confusion.dice()))
}

/// Loss of one batch and its gradient at the logits.
fn batch_loss(
    logits: &Tensor4D<f32>,
    targets: &[f32],
    cfg: &TrainConfig,
    noise_stream: u64,
) -> Result<(f64, Tensor4D<f32>)> {
    let [n, c, _, _] = logits.shape();
    let plane = logits.plane();
    let gather = |ch: usize| -> Vec<f64> { (0..n).flat_map(|i| logits.channel(i, ch).iter().map(|&v| v as f64)).collect() };
    let mut grad = Tensor4D::zeros(logits.shape());
    let scatter = |grad: &mut Tensor4D<f32>, ch: usize, g: &[f64]| {
        for i in 0..n {
            let base = (i * c + ch) * plane;
            for (d, &v) in grad.data_mut()[base..base + plane].iter_mut().zip(&g[i * plane..(i + 1) * plane]) {
                *d = v as f32;
            }
        }
    };
    let mean = gather(0);
    let loss = if cfg.unet.mve_head {
        let log_var = gather(1);
        let mut rng = stream_rng(derive_seed(cfg.seed, SEED_NOISE), noise_stream);
        let m = mve_mc_dice_loss(&mean, &log_var, targets, cfg.mc_samples, cfg.dice_smooth, cfg.mc_sampling, &mut rng)?;
        scatter(&mut grad, 0, &m.grad_mean);
        scatter(&mut grad, 1, &m.grad_log_var);
        m.loss
    } else {
        let (l, g) = dice_loss_logits(&mean, targets, cfg.dice_smooth)?;
        scatter(&mut grad, 0, &g);
        l
    };
    Ok((loss, grad))
}

/// Train from scratch; see [`train_with_progress`].
pub fn train(train_set: &TileSet, val_set: &TileSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_set, val_set, cfg, |_| {})
}

/// Adam on the Dice loss with plateau learning-rate decay and early stopping
/// on the validation loss. `progress` sees every finished epoch.
pub fn train_with_progress(
    train_set: &TileSet,
    val_set: &TileSet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_tiles("training", train_set, &cfg.unet)?;
    check_tiles("validation", val_set, &cfg.unet)?;
    let mut net = build_unet::<f32>(&cfg.unet, derive_seed(cfg.seed, SEED_INIT))?;
    let mut plateau = PlateauController::new(cfg.lr0, cfg.lr_decay_factor, cfg.lr_patience, cfg.early_stop_patience);
    let mut epochs = Vec::new();
    let mut best: Option<(UNet<f32>, usize, f64, f64)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = TrainStop::MaxEpochs;
    let mut failure = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = plateau.lr();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, SEED_SHUFFLE), epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let tiles = idx
                .iter()
                .map(|&i| {
                    let stream = ((epoch as u64) << 32) | i as u64;
                    augment(&train_set.tiles[i], &cfg.augmentation, &mut stream_rng(derive_seed(cfg.seed, SEED_AUGMENT), stream))
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = batch_tensors(&tiles)?;
            let logits = net.forward_train(&x)?;
            let noise_stream = ((epoch as u64) << 32) | b as u64;
            let (loss, dlogits) = batch_loss(&logits, &y, cfg, noise_stream)?;
            if !loss.is_finite() {
                failure = Some(format!("non-finite training loss at epoch {epoch}, batch {b}"));
                stop = TrainStop::NonFinite;
                net.clear_tape();
                break 'epochs;
            }
            net.store_mut().zero_grad();
            net.backward(&dlogits)?;
            if let Err(e) = adam_step(net.store_mut(), lr, &cfg.adam) {
                failure = Some(format!("epoch {epoch}, batch {b}: {e}"));
                stop = TrainStop::NonFinite;
                break 'epochs;
            }
            loss_sum += loss;
            batches += 1;
        }
        let (val_loss, val_dice) = evaluate_tiles(&net, val_set, cfg.eval_batch_size, cfg.dice_smooth)?;
        if !val_loss.is_finite() {
            failure = Some(format!("non-finite validation loss at epoch {epoch}"));
            stop = TrainStop::NonFinite;
            break;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_dice,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} dice {:.4} lr {:.3e} ({:.1}s)",
            record.train_loss,
            val_loss,
            val_dice,
            lr,
            record.seconds
        );
        progress(&record);
        epochs.push(record);
        let decision = plateau.observe(epoch, val_loss);
        if decision.improved {
            best = Some((net.cast(), epoch, val_loss, val_dice));
        }
        if decision.lr_reduced {
            log::info!("learning rate reduced to {:.3e}", plateau.lr());
        }
        if decision.stop {
            stop = TrainStop::EarlyStopping;
            break;
        }
    }

    let Some((best_net, best_epoch, best_val_loss, best_val_dice)) = best else {
        return Err(Error::Numerical(
            failure.unwrap_or_else(|| "training produced no finite validation loss".into()),
        ));
    };
    let parameters = best_net.store().trainable_count();
    Ok(TrainOutcome {
        net: best_net,
        report: TrainReport {
            epochs,
            best_epoch,
            best_val_loss,
            best_val_dice,
            stop,
            failure,
            checkpoint: None,
            parameters,
        },
    })
}
