use serde::{Deserialize, Serialize};

use super::lbfgs::{lbfgs_minimize, LbfgsOptions};
use super::reliability::reliability;
use crate::error::{invalid, Error, Result};
use crate::tensornet::layers::sigmoid;

/// Largest temperature reported by [`fit_temperature`].
pub const MAX_TEMPERATURE: f64 = 1000.0;

/// Fitted temperature and the diagnostics of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub temperature: f64,
    pub iterations: usize,
    pub converged: bool,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub bins: usize,
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid!("temperature must be positive and finite, got {t}"));
    }
    Ok(())
}

/// `sigmoid(z / T)` for every logit.
pub fn apply_temperature<L: Copy + Into<f64>>(logits: &[L], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    Ok(logits.iter().map(|&z| sigmoid(z.into() / t)).collect())
}

/// `ln(1 + e^u)` without overflow.
#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn check_pair<L, Y: Copy + Into<f64>>(logits: &[L], targets: &[Y]) -> Result<()> {
    if logits.is_empty() {
        return Err(invalid!("no logits"));
    }
    if logits.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(y) = targets.iter().map(|&y| y.into()).find(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid!("targets must be 0 or 1, found {y}"));
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(z / T)` and its derivative in `T`.
///
/// Per pixel the loss is `softplus(u) - y u` with `u = z / T`, which stays
/// finite for any logit magnitude.
pub fn nll_with_grad<L: Copy + Into<f64>, Y: Copy + Into<f64>>(logits: &[L], targets: &[Y], t: f64) -> Result<(f64, f64)> {
    check_pair(logits, targets)?;
    check_temperature(t)?;
    let (loss, dt) = nll_terms(logits, targets, t);
    Ok((loss, dt))
}

fn nll_terms<L: Copy + Into<f64>, Y: Copy + Into<f64>>(logits: &[L], targets: &[Y], t: f64) -> (f64, f64) {
    let mut loss = 0.0;
    let mut dt = 0.0;
    for (&z, &y) in logits.iter().zip(targets) {
        let (z, y) = (z.into(), y.into());
        let u = z / t;
        loss += softplus(u) - y * u;
        // d/dT = (sigmoid(u) - y) * (-z / T^2)
        dt -= (sigmoid(u) - y) * z;
    }
    let n = logits.len() as f64;
    (loss / n, dt / (n * t * t))
}

pub fn nll<L: Copy + Into<f64>, Y: Copy + Into<f64>>(logits: &[L], targets: &[Y], t: f64) -> Result<f64> {
    Ok(nll_with_grad(logits, targets, t)?.0)
}

/// Temperature minimizing the validation NLL, searched over `s = ln T`
/// from `T = 1` with L-BFGS.
///
/// When the optimum runs past [`MAX_TEMPERATURE`] (logits carry no
/// information about the labels) the result is capped there and marked as
/// not converged.
pub fn fit_temperature<L: Copy + Into<f64>, Y: Copy + Into<f64>>(
    logits: &[L],
    targets: &[Y],
    bins: usize,
) -> Result<CalibrationModel> {
    check_pair(logits, targets)?;
    let positives = targets.iter().filter(|&&y| y.into() == 1.0).count();
    if positives == 0 || positives == targets.len() {
        return Err(Error::Degenerate("validation targets contain a single class".into()));
    }
    let s_max = MAX_TEMPERATURE.ln();
    let objective = |x: &[f64], g: &mut [f64]| {
        // flat well beyond the cap
        let s = x[0].min(s_max + 5.0);
        let t = s.exp();
        let (f, dt) = nll_terms(logits, targets, t);
        g[0] = if x[0] > s { 0.0 } else { dt * t };
        f
    };
    let res = lbfgs_minimize(objective, &[0.0], &LbfgsOptions::default())?;
    let mut t = res.x[0].exp();
    let mut converged = res.converged;
    if !(t <= MAX_TEMPERATURE) {
        t = MAX_TEMPERATURE;
        converged = false;
    }
    let probs_before = apply_temperature(logits, 1.0)?;
    let probs_after = apply_temperature(logits, t)?;
    Ok(CalibrationModel {
        temperature: t,
        iterations: res.iterations,
        converged,
        nll_before: nll_terms(logits, targets, 1.0).0,
        nll_after: nll_terms(logits, targets, t).0,
        ece_before: reliability(&probs_before, targets, bins)?.ece,
        ece_after: reliability(&probs_after, targets, bins)?.ece,
        bins,
    })
}
