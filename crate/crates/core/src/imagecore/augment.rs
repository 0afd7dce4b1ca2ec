use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tile;
use crate::classical::gaussian_blur;
use crate::error::{invalid, Result};

/// Random training-time perturbations.
///
/// Rotations are quarter turns so masks never need resampling. Geometric
/// transforms act on both input planes and the target; noise and blur act on
/// the input planes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Allowed rotations in quarter turns (0..=3), one chosen uniformly.
    pub rotations: Vec<u8>,
    pub rotation_prob: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub flip_prob: f64,
    /// Standard deviation of additive Gaussian noise, intensity units.
    pub noise_sigma: f32,
    pub noise_prob: f64,
    /// Blur sigma is drawn uniformly from this interval (pixels).
    pub blur_sigma_range: (f32, f32),
    pub blur_prob: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotations: vec![0, 1, 2, 3],
            rotation_prob: 0.5,
            hflip: true,
            vflip: true,
            flip_prob: 0.5,
            noise_sigma: 0.03,
            noise_prob: 0.5,
            blur_sigma_range: (0.5, 1.5),
            blur_prob: 0.5,
        }
    }
}

impl AugmentationSpec {
    /// Every transform disabled.
    pub fn none() -> Self {
        AugmentationSpec {
            rotation_prob: 0.0,
            flip_prob: 0.0,
            noise_prob: 0.0,
            blur_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_prob == 0.0 && self.flip_prob == 0.0 && self.noise_prob == 0.0 && self.blur_prob == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("rotation_prob", self.rotation_prob),
            ("flip_prob", self.flip_prob),
            ("noise_prob", self.noise_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid!("{name} = {p} is not a probability"));
            }
        }
        if self.rotations.iter().any(|&r| r > 3) {
            return Err(invalid!("rotations are quarter turns in 0..=3"));
        }
        if self.rotation_prob > 0.0 && self.rotations.is_empty() {
            return Err(invalid!("rotation enabled with no allowed rotations"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(invalid!("noise_sigma must be non-negative"));
        }
        let (lo, hi) = self.blur_sigma_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(invalid!("blur sigma range ({lo}, {hi}) must be non-negative and ordered"));
        }
        Ok(())
    }
}

/// Counter-clockwise quarter turn of a square plane.
fn rotate_plane<T: Copy>(src: &[T], n: usize, dst: &mut [T]) {
    for y in 0..n {
        for x in 0..n {
            dst[(n - 1 - x) * n + y] = src[y * n + x];
        }
    }
}

fn flip_h<T>(plane: &mut [T], n: usize) {
    for row in plane.chunks_mut(n) {
        row.reverse();
    }
}

fn flip_v<T>(plane: &mut [T], n: usize) {
    for y in 0..n / 2 {
        let (top, bottom) = plane.split_at_mut((n - 1 - y) * n);
        top[y * n..(y + 1) * n].swap_with_slice(&mut bottom[..n]);
    }
}

fn map_planes(tile: &mut Tile, f: impl Fn(&mut Vec<f32>, &mut Vec<bool>, usize)) {
    let n = tile.size();
    let mut mask = tile.target.data().to_vec();
    let mut planes: Vec<Vec<f32>> = (0..2).map(|c| tile.channel(c).to_vec()).collect();
    // mask is transformed once, alongside the first plane
    f(&mut planes[0], &mut mask, n);
    let mut scratch = vec![false; n * n];
    f(&mut planes[1], &mut scratch, n);
    let input = tile.input_mut();
    input[..n * n].copy_from_slice(&planes[0]);
    input[n * n..].copy_from_slice(&planes[1]);
    tile.target.data_mut().copy_from_slice(&mask);
}

fn rotate_tile(tile: &mut Tile, quarter_turns: u8) {
    for _ in 0..quarter_turns {
        map_planes(tile, |plane, mask, n| {
            let mut p = vec![0.0; n * n];
            rotate_plane(plane, n, &mut p);
            *plane = p;
            let mut m = vec![false; n * n];
            rotate_plane(mask, n, &mut m);
            *mask = m;
        });
    }
}

/// Horizontal (left-right) mirror of planes and target.
pub(crate) fn hflip_tile(tile: &mut Tile) {
    map_planes(tile, |plane, mask, n| {
        flip_h(plane, n);
        flip_h(mask, n);
    });
}

pub(crate) fn vflip_tile(tile: &mut Tile) {
    map_planes(tile, |plane, mask, n| {
        flip_v(plane, n);
        flip_v(mask, n);
    });
}

/// Apply a random draw of `spec` to a copy of `tile`.
///
/// Randomness comes only from `rng`; give each tile its own stream for
/// schedule-independent results.
pub fn augment<R: Rng + ?Sized>(tile: &Tile, spec: &AugmentationSpec, rng: &mut R) -> Result<Tile> {
    spec.validate()?;
    let mut out = tile.clone();
    if spec.is_identity() {
        return Ok(out);
    }
    let n = out.size();

    if spec.rotation_prob > 0.0 && rng.random::<f64>() < spec.rotation_prob {
        let turns = spec.rotations[rng.random_range(0..spec.rotations.len())];
        rotate_tile(&mut out, turns);
    }
    if spec.hflip && spec.flip_prob > 0.0 && rng.random::<f64>() < spec.flip_prob {
        hflip_tile(&mut out);
    }
    if spec.vflip && spec.flip_prob > 0.0 && rng.random::<f64>() < spec.flip_prob {
        vflip_tile(&mut out);
    }
    if spec.noise_sigma > 0.0 && spec.noise_prob > 0.0 && rng.random::<f64>() < spec.noise_prob {
        let normal = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| invalid!("{e}"))?;
        for v in out.input_mut() {
            *v += normal.sample(rng);
        }
    }
    if spec.blur_prob > 0.0 && rng.random::<f64>() < spec.blur_prob {
        let (lo, hi) = spec.blur_sigma_range;
        let sigma = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        if sigma > 0.0 {
            for c in 0..2 {
                let blurred = gaussian_blur(&out.channel_image(c), sigma)?;
                out.input_mut()[c * n * n..(c + 1) * n * n].copy_from_slice(blurred.data());
            }
        }
    }
    for v in out.input_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}
