//! Dice loss, the training loop, inference and hyperparameter search.

mod loss;
mod predict;
mod schedule;
mod search;
mod train;

pub use loss::{dice_loss, dice_loss_grad, dice_loss_logits};
pub use predict::{predict_image, predict_tiles, PredictOptions, Prediction};
pub use schedule::{PlateauController, PlateauDecision};
pub use search::{
    hyperparameter_search, sample_trial, Objective, SearchResult, SearchSpace, Trial, TrialStatus,
};
pub use train::{
    batch_tensors, evaluate_tiles, train, train_with_progress, EpochRecord, TrainConfig, TrainOutcome, TrainReport,
    TrainStop,
};
