//! Soft Dice loss over a whole batch.

use crate::error::{Error, Result};

fn check<P: Copy + Into<f64>, T: Copy + Into<f64>>(pred: &[P], target: &[T]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Sums `(Σ y ŷ, Σ y + Σ ŷ)` accumulated in `f64`.
fn sums<P: Copy + Into<f64>, T: Copy + Into<f64>>(pred: &[P], target: &[T]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t) = (p.into(), t.into());
        inter += p * t;
        total += p + t;
    }
    (inter, total)
}

fn ratio(inter: f64, total: f64, eps: f64) -> f64 {
    let den = total + eps;
    if den == 0.0 {
        // empty prediction and empty target agree perfectly
        return 0.0;
    }
    1.0 - (2.0 * inter + eps) / den
}

/// `1 - (2 Σ y ŷ + ε) / (Σ y + Σ ŷ + ε)` with all pixels of the batch pooled.
///
/// With `ε = 0` and both sums zero the loss is defined as 0.
pub fn dice_loss<P: Copy + Into<f64>, T: Copy + Into<f64>>(pred: &[P], target: &[T], eps: f64) -> Result<f64> {
    check(pred, target)?;
    let (i, s) = sums(pred, target);
    Ok(ratio(i, s, eps))
}

/// Loss and its gradient with respect to each predicted probability.
pub fn dice_loss_grad<P: Copy + Into<f64>, T: Copy + Into<f64>>(
    pred: &[P],
    target: &[T],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    check(pred, target)?;
    let (i, s) = sums(pred, target);
    let den = s + eps;
    if den == 0.0 {
        // undefined with ε = 0 and nothing predicted or labelled
        return Ok((0.0, vec![0.0; pred.len()]));
    }
    let num = 2.0 * i + eps;
    let den2 = den * den;
    let grad = target
        .iter()
        .map(|&t| -(2.0 * t.into() * den - num) / den2)
        .collect();
    Ok((ratio(i, s, eps), grad))
}

/// Dice loss of `sigmoid(logits)` and its gradient with respect to the logits.
pub fn dice_loss_logits<T: Copy + Into<f64>>(logits: &[f64], target: &[T], eps: f64) -> Result<(f64, Vec<f64>)> {
    let probs: Vec<f64> = logits.iter().map(|&z| crate::tensornet::layers::sigmoid(z)).collect();
    let (loss, mut g) = dice_loss_grad(&probs, target, eps)?;
    for (gi, p) in g.iter_mut().zip(&probs) {
        *gi *= p * (1.0 - p);
    }
    Ok((loss, g))
}
