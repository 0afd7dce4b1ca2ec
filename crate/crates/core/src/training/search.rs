use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig};
use crate::error::{invalid, Result};
use crate::imagecore::TileSet;
use crate::rng::{derive_seed, stream_rng};

/// Ranges of the four searched hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub lr0: (f64, f64),
    /// Inclusive.
    pub early_stop_patience: (usize, usize),
    pub base_features: Vec<usize>,
    pub encoder_blocks: Vec<usize>,
    pub budget: usize,
    pub seed: u64,
    /// Epoch cap applied to every trial.
    pub max_epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr0: (1e-5, 1e-2),
            early_stop_patience: (5, 20),
            base_features: vec![16, 32, 64, 128],
            encoder_blocks: vec![2, 3, 4, 5],
            budget: 40,
            seed: 0,
            max_epochs: 30,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.lr0;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(invalid!("lr0 range {:?} must be positive and ordered", self.lr0));
        }
        let (p, q) = self.early_stop_patience;
        if p == 0 || p > q {
            return Err(invalid!("early_stop_patience range {:?} must be positive and ordered", self.early_stop_patience));
        }
        if self.base_features.is_empty() || self.base_features.contains(&0) {
            return Err(invalid!("base_features needs at least one positive choice"));
        }
        if self.encoder_blocks.is_empty() {
            return Err(invalid!("encoder_blocks needs at least one choice"));
        }
        if self.budget == 0 {
            return Err(invalid!("budget must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(invalid!("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Lowest best validation loss.
    #[default]
    ValLoss,
    /// Highest validation Dice at the best epoch.
    ValDice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    /// The sampled architecture cannot process the tiles.
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub lr0: f64,
    pub early_stop_patience: usize,
    pub base_features: usize,
    pub encoder_blocks: usize,
    pub status: TrialStatus,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub objective: Objective,
    pub trials: Vec<Trial>,
    /// Index into `trials` of the winner.
    pub best: Option<usize>,
}

impl SearchResult {
    /// `trial,lr0,early_stop_patience,base_features,encoder_blocks,status,val_loss,val_dice,epochs_run,best_epoch`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from(
            "trial,lr0,early_stop_patience,base_features,encoder_blocks,status,val_loss,val_dice,epochs_run,best_epoch\n",
        );
        for t in &self.trials {
            let status = match t.status {
                TrialStatus::Completed => "completed",
                TrialStatus::Infeasible => "infeasible",
                TrialStatus::Failed => "failed",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                t.index,
                t.lr0,
                t.early_stop_patience,
                t.base_features,
                t.encoder_blocks,
                status,
                opt(t.val_loss),
                opt(t.val_dice),
                t.epochs_run,
                t.best_epoch.map(|e| e.to_string()).unwrap_or_default()
            ));
        }
        s
    }
}

/// Sampled settings of trial `index`; independent of every other trial.
pub fn sample_trial(space: &SearchSpace, index: usize) -> (f64, usize, usize, usize) {
    let mut rng = stream_rng(space.seed, index as u64);
    let (a, b) = space.lr0;
    let lr = (a.ln() + rng.random::<f64>() * (b.ln() - a.ln())).exp();
    let patience = rng.random_range(space.early_stop_patience.0..=space.early_stop_patience.1);
    let features = space.base_features[rng.random_range(0..space.base_features.len())];
    let blocks = space.encoder_blocks[rng.random_range(0..space.encoder_blocks.len())];
    (lr, patience, features, blocks)
}

/// Seeded random search. Each trial trains from `base` with the four sampled
/// settings replaced and `max_epochs` capped by the space.
pub fn hyperparameter_search(
    space: &SearchSpace,
    base: &TrainConfig,
    train_set: &TileSet,
    val_set: &TileSet,
    objective: Objective,
) -> Result<SearchResult> {
    space.validate()?;
    let mut trials = Vec::with_capacity(space.budget);
    for index in 0..space.budget {
        let (lr0, early_stop_patience, base_features, encoder_blocks) = sample_trial(space, index);
        let mut cfg = base.clone();
        cfg.lr0 = lr0;
        cfg.early_stop_patience = early_stop_patience;
        cfg.unet.base_features = base_features;
        cfg.unet.encoder_blocks = encoder_blocks;
        cfg.max_epochs = space.max_epochs;
        cfg.seed = derive_seed(space.seed, index as u64);
        let mut trial = Trial {
            index,
            lr0,
            early_stop_patience,
            base_features,
            encoder_blocks,
            status: TrialStatus::Completed,
            val_loss: None,
            val_dice: None,
            epochs_run: 0,
            best_epoch: None,
            message: None,
        };
        let m = cfg.unet.size_multiple();
        if cfg.unet.validate().is_err() || train_set.tile_size % m != 0 {
            trial.status = TrialStatus::Infeasible;
            trial.message = Some(format!(
                "{encoder_blocks} encoder blocks need tiles divisible by {m}, got {}",
                train_set.tile_size
            ));
            log::info!("trial {index}: infeasible");
            trials.push(trial);
            continue;
        }
        match train(train_set, val_set, &cfg) {
            Ok(out) => {
                trial.val_loss = Some(out.report.best_val_loss);
                trial.val_dice = Some(out.report.best_val_dice);
                trial.epochs_run = out.report.epochs.len();
                trial.best_epoch = Some(out.report.best_epoch);
            }
            Err(e) => {
                trial.status = TrialStatus::Failed;
                trial.message = Some(e.to_string());
            }
        }
        log::info!("trial {index}: lr0 {lr0:.2e} patience {early_stop_patience} features {base_features} blocks {encoder_blocks} -> {:?}", trial.val_loss);
        trials.push(trial);
    }
    let score = |t: &Trial| match objective {
        Objective::ValLoss => t.val_loss.map(|v| -v),
        Objective::ValDice => t.val_dice,
    };
    let best = trials
        .iter()
        .filter_map(|t| score(t).map(|s| (t.index, s)))
        .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
            Some((_, b)) if b >= s => acc,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i);
    Ok(SearchResult { objective, trials, best })
}
