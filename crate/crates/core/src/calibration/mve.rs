//! Monte-Carlo Dice loss for a network that predicts a mean logit and a
//! log-variance per pixel.
//!
//! Sample `s` draws `z = mu + exp(log_var / 2) * e_s` with standard normal
//! `e_s`; the loss is the mean over samples of the Dice loss of
//! `sigmoid(z)`. Gradients flow to `mu` and `log_var` through the
//! reparameterization.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::training::dice_loss_grad;
use crate::tensornet::layers::sigmoid;

/// How the per-pixel normal draws are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McSampling {
    /// Independent draws.
    Iid,
    /// Latin hypercube per pixel: the `S` draws of a pixel fall one in each
    /// of `S` equal-probability strata, in a random order.
    #[default]
    Stratified,
}

pub const DEFAULT_MC_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MveLoss {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_var: Vec<f64>,
}

/// Noise matrix laid out sample-major: `e[s * n + i]`.
fn draw_noise<R: Rng + ?Sized>(n: usize, samples: usize, sampling: McSampling, rng: &mut R) -> Vec<f64> {
    let mut e = vec![0.0; n * samples];
    match sampling {
        McSampling::Iid => {
            for v in &mut e {
                *v = StandardNormal.sample(rng);
            }
        }
        McSampling::Stratified => {
            let normal = Normal::standard();
            let mut strata: Vec<usize> = (0..samples).collect();
            for i in 0..n {
                strata.shuffle(rng);
                for (s, &k) in strata.iter().enumerate() {
                    let u: f64 = rng.random();
                    // keep strictly inside (0, 1)
                    let q = ((k as f64 + u) / samples as f64).clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
                    e[s * n + i] = normal.inverse_cdf(q);
                }
            }
        }
    }
    e
}

pub fn mve_mc_dice_loss<T: Copy + Into<f64>, R: Rng + ?Sized>(
    mean: &[f64],
    log_var: &[f64],
    targets: &[T],
    samples: usize,
    eps: f64,
    sampling: McSampling,
    rng: &mut R,
) -> Result<MveLoss> {
    if samples == 0 {
        return Err(invalid!("at least one Monte-Carlo sample is required"));
    }
    let n = mean.len();
    if log_var.len() != n || targets.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "mean {n}, log-variance {}, targets {}",
            log_var.len(),
            targets.len()
        )));
    }
    if let Some(i) = log_var.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite log-variance {} at pixel {i}", log_var[i])));
    }
    let std: Vec<f64> = log_var.iter().map(|v| (0.5 * v).exp()).collect();
    let noise = draw_noise(n, samples, sampling, rng);
    let inv_s = 1.0 / samples as f64;
    let mut loss = 0.0;
    let mut grad_mean = vec![0.0; n];
    let mut grad_log_var = vec![0.0; n];
    let mut probs = vec![0.0; n];
    for s in 0..samples {
        let e = &noise[s * n..(s + 1) * n];
        for i in 0..n {
            probs[i] = sigmoid(mean[i] + std[i] * e[i]);
        }
        let (l, gp) = dice_loss_grad(&probs, targets, eps)?;
        loss += l * inv_s;
        for i in 0..n {
            let gz = gp[i] * probs[i] * (1.0 - probs[i]) * inv_s;
            grad_mean[i] += gz;
            grad_log_var[i] += gz * e[i] * 0.5 * std[i];
        }
    }
    Ok(MveLoss {
        loss,
        grad_mean,
        grad_log_var,
    })
}
