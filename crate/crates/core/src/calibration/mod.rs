//! Post-hoc temperature scaling, reliability analysis, confidence maps and
//! the Monte-Carlo loss of the mean-variance network head.

mod lbfgs;
mod mve;
mod reliability;
mod temperature;

pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult, LineStep, StopReason};
pub use mve::{mve_mc_dice_loss, McSampling, MveLoss, DEFAULT_MC_SAMPLES};
pub use reliability::{
    bin_edge, bin_index, confidence_level, confidence_map, reliability, ConfidenceLevel, ConfidenceMap, ReliabilityBin,
    ReliabilityDiagram, CONFIDENCE_THRESHOLDS,
};
pub use temperature::{apply_temperature, fit_temperature, nll, nll_with_grad, CalibrationModel, MAX_TEMPERATURE};
