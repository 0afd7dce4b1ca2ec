use serde::{Deserialize, Serialize};

use super::train::batch_tensors;
use crate::error::{invalid, Error, Result};
use crate::imagecore::{BinaryMask, ChannelPair, Image2D, TileSet};
use crate::tensornet::layers::sigmoid;
use crate::tensornet::{Tensor4D, UNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    pub tile_size: usize,
    /// Divide logits by this before the sigmoid.
    pub temperature: Option<f64>,
    pub batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            tile_size: 128,
            temperature: None,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Foreground logit per pixel, before temperature scaling.
    pub logits: Image2D,
    pub probability: Image2D,
    /// `probability >= 0.5`.
    pub mask: BinaryMask,
    /// Predicted log-variance when the network has a variance head.
    pub log_variance: Option<Image2D>,
}

/// Reflect index `i` into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Eval-mode logits of every tile, `(n, head_channels, s, s)`.
pub fn predict_tiles(net: &UNet<f32>, tiles: &TileSet, batch_size: usize) -> Result<Tensor4D<f32>> {
    if tiles.is_empty() {
        return Err(invalid!("no tiles to predict"));
    }
    let mut out = Vec::new();
    let mut shape = [0, 0, 0, 0];
    for chunk in tiles.tiles.chunks(batch_size.max(1)) {
        let (x, _) = batch_tensors(chunk)?;
        let z = net.forward_eval(&x)?;
        shape = [shape[0] + z.n(), z.c(), z.h(), z.w()];
        out.extend_from_slice(z.data());
    }
    Tensor4D::new(shape, out)
}

/// Segment a full image: the image is covered by a grid of tiles, tiles
/// overhanging the border are filled by mirror reflection, each tile runs
/// through the network in evaluation mode, and the valid part of every
/// tile is written back at its origin.
pub fn predict_image(net: &UNet<f32>, pair: &ChannelPair, opts: &PredictOptions) -> Result<Prediction> {
    let s = opts.tile_size;
    let cfg = net.config();
    if s == 0 || s % cfg.size_multiple() != 0 {
        return Err(Error::ShapeMismatch(format!(
            "tile size {s} is not a positive multiple of {}",
            cfg.size_multiple()
        )));
    }
    if cfg.in_channels != 2 {
        return Err(Error::ShapeMismatch(format!("network expects {} input channels, not 2", cfg.in_channels)));
    }
    if let Some(t) = opts.temperature {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid!("temperature must be positive, got {t}"));
        }
    }
    let (w, h) = pair.dims();
    let origins: Vec<(usize, usize)> =
        (0..h.div_ceil(s)).flat_map(|ty| (0..w.div_ceil(s)).map(move |tx| (ty * s, tx * s))).collect();
    let plane = s * s;
    let mut logits = vec![0.0f32; w * h];
    let mut log_var = cfg.mve_head.then(|| vec![0.0f32; w * h]);
    for chunk in origins.chunks(opts.batch_size.max(1)) {
        let mut input = Vec::with_capacity(chunk.len() * 2 * plane);
        for &(y0, x0) in chunk {
            for img in [pair.se(), pair.inlens()] {
                for y in 0..s {
                    let row = img.row(reflect(y0 + y, h));
                    input.extend((0..s).map(|x| row[reflect(x0 + x, w)]));
                }
            }
        }
        let z = net.forward_eval(&Tensor4D::new([chunk.len(), 2, s, s], input)?)?;
        for (i, &(y0, x0)) in chunk.iter().enumerate() {
            let mean = z.channel(i, 0);
            let var = cfg.mve_head.then(|| z.channel(i, 1));
            for y in 0..s.min(h - y0) {
                for x in 0..s.min(w - x0) {
                    let dst = (y0 + y) * w + x0 + x;
                    logits[dst] = mean[y * s + x];
                    if let (Some(lv), Some(src)) = (log_var.as_mut(), var) {
                        lv[dst] = src[y * s + x];
                    }
                }
            }
        }
    }
    let t = opts.temperature.unwrap_or(1.0);
    let prob: Vec<f32> = logits.iter().map(|&z| sigmoid(z as f64 / t) as f32).collect();
    let mask = BinaryMask::new(w, h, prob.iter().map(|&p| p >= 0.5).collect())?;
    let px = pair.se().pixel_size_nm();
    Ok(Prediction {
        logits: Image2D::new(w, h, logits)?.with_pixel_size(px),
        probability: Image2D::new(w, h, prob)?.with_pixel_size(px),
        mask,
        log_variance: log_var.map(|v| Image2D::new(w, h, v)).transpose()?.map(|i| i.with_pixel_size(px)),
    })
}
