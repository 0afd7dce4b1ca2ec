//! Synthetic two-channel micrographs with exact carbide masks.
//!
//! A scene is a ferritic matrix of Voronoi grains with correlated texture,
//! an illumination ramp and optional bright grain boundaries, plus
//! non-overlapping elliptical carbides. The SE rendering and the InLens
//! rendering share geometry but differ in contrast: InLens shows carbides
//! with higher contrast, and grain boundaries can be made to appear in one
//! channel only. The `hard` preset overlaps carbide and grain intensities
//! and adds SE-only boundary lines, which defeats a single global
//! threshold on the merged image.

mod dataset;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classical::gaussian_blur;
use crate::error::{invalid, Error, Result};
use crate::imagecore::{BinaryMask, ChannelPair, Image2D};
use crate::rng::stream_rng;

pub use dataset::{generate_dataset, read_dataset, DatasetManifest, SceneRecord, DATASET_MANIFEST};

const PLACEMENT_RETRIES: usize = 200;

/// Mean and spread of a gray level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensity {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub pixel_size_nm: f64,
    /// Inclusive range of carbides per scene.
    pub carbide_count: (usize, usize),
    /// Range of ellipse semi-axes in pixels.
    pub axis_range: (f64, f64),
    /// SE gray level of carbides, drawn once per particle.
    pub carbide: Intensity,
    /// SE gray level of the matrix; `sd` spreads grain-to-grain levels.
    pub matrix: Intensity,
    /// Mean grain diameter in pixels.
    pub grain_size: f64,
    /// Width in pixels of grain-boundary lines; 0 disables them.
    pub boundary_width: f64,
    pub boundary_se: f64,
    pub boundary_inlens: f64,
    pub texture_amplitude: f64,
    /// Correlation length of the texture in pixels.
    pub texture_correlation: f64,
    /// Peak-to-peak amplitude of the linear illumination ramp.
    pub gradient_amplitude: f64,
    /// Correlation of the texture between the two channels.
    pub channel_correlation: f64,
    /// InLens matrix level.
    pub inlens_matrix: f64,
    /// InLens contrast relative to SE.
    pub inlens_gain: f64,
    pub noise_sigma: f64,
    /// Detector blur; 0 disables it.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 256,
            height: 256,
            pixel_size_nm: 6.98,
            carbide_count: (20, 40),
            axis_range: (2.0, 8.0),
            carbide: Intensity { mean: 0.65, sd: 0.04 },
            matrix: Intensity { mean: 0.35, sd: 0.02 },
            grain_size: 64.0,
            boundary_width: 0.0,
            boundary_se: 0.0,
            boundary_inlens: 0.0,
            texture_amplitude: 0.02,
            texture_correlation: 4.0,
            gradient_amplitude: 0.15,
            channel_correlation: 0.8,
            inlens_matrix: 0.30,
            inlens_gain: 1.5,
            noise_sigma: 0.02,
            blur_sigma: 0.7,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Carbide levels overlapping the grain levels, and bright boundary
    /// lines visible in SE only.
    pub fn hard() -> Self {
        SceneConfig {
            carbide: Intensity { mean: 0.65, sd: 0.05 },
            matrix: Intensity { mean: 0.36, sd: 0.02 },
            grain_size: 40.0,
            boundary_width: 1.5,
            boundary_se: 0.3,
            boundary_inlens: 0.0,
            texture_amplitude: 0.03,
            noise_sigma: 0.03,
            ..SceneConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid!("{name} {v} outside [0, 1]"))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid!("{name} must be non-negative, got {v}"))
            }
        };
        if self.width == 0 || self.height == 0 {
            return Err(invalid!("scene must be at least 1x1"));
        }
        if !(self.pixel_size_nm > 0.0) {
            return Err(invalid!("pixel_size_nm must be positive"));
        }
        if self.carbide_count.0 > self.carbide_count.1 {
            return Err(invalid!("carbide_count range {:?} is not ordered", self.carbide_count));
        }
        let (a0, a1) = self.axis_range;
        if !(a0 > 0.0 && a0 <= a1 && a1.is_finite()) {
            return Err(invalid!("axis_range {:?} must be positive and ordered", self.axis_range));
        }
        unit("carbide mean", self.carbide.mean)?;
        unit("matrix mean", self.matrix.mean)?;
        unit("inlens_matrix", self.inlens_matrix)?;
        non_negative("carbide sd", self.carbide.sd)?;
        non_negative("matrix sd", self.matrix.sd)?;
        non_negative("boundary_width", self.boundary_width)?;
        non_negative("texture_amplitude", self.texture_amplitude)?;
        non_negative("gradient_amplitude", self.gradient_amplitude)?;
        non_negative("noise_sigma", self.noise_sigma)?;
        non_negative("blur_sigma", self.blur_sigma)?;
        non_negative("inlens_gain", self.inlens_gain)?;
        if !(self.grain_size > 0.0) {
            return Err(invalid!("grain_size must be positive"));
        }
        if !(self.texture_correlation > 0.0) {
            return Err(invalid!("texture_correlation must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.channel_correlation) {
            return Err(invalid!("channel_correlation must lie in [-1, 1]"));
        }
        if !self.boundary_se.is_finite() || !self.boundary_inlens.is_finite() {
            return Err(invalid!("boundary contrasts must be finite"));
        }
        Ok(())
    }
}

/// One placed carbide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    /// Orientation of the `a` axis in radians.
    pub theta: f64,
    /// SE gray level before illumination.
    pub level: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(x, y)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    /// Pixel bounding box `(x0, y0, x1, y1)`, inclusive, clipped to the image.
    fn bounds(&self, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
        let r = self.a.max(self.b);
        let x0 = (self.cx - r).floor().max(0.0);
        let y0 = (self.cy - r).floor().max(0.0);
        let x1 = (self.cx + r).ceil().min(w as f64 - 1.0);
        let y1 = (self.cy + r).ceil().min(h as f64 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }

    fn pixels(&self, w: usize, h: usize) -> Vec<(usize, usize)> {
        let Some((x0, y0, x1, y1)) = self.bounds(w, h) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub pair: ChannelPair,
    pub mask: BinaryMask,
    pub carbides: Vec<Ellipse>,
    pub seed: u64,
}

/// Unit-variance Gaussian random field with the given correlation length.
fn texture<R: Rng>(w: usize, h: usize, corr: f64, rng: &mut R) -> Result<Vec<f64>> {
    let white: Vec<f32> = (0..w * h).map(|_| StandardNormal.sample(rng)).collect();
    let smooth = gaussian_blur(&Image2D::new(w, h, white)?, corr as f32)?;
    let data = smooth.data();
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    Ok(data.iter().map(|&v| (v as f64 - mean) / sd).collect())
}

/// Grain index and boundary flag per pixel from a jittered-grid Voronoi
/// tessellation.
fn grains<R: Rng>(w: usize, h: usize, cfg: &SceneConfig, rng: &mut R) -> (Vec<usize>, Vec<bool>) {
    let cell = cfg.grain_size;
    let gx = (w as f64 / cell).ceil() as usize + 1;
    let gy = (h as f64 / cell).ceil() as usize + 1;
    let seeds: Vec<(f64, f64)> = (0..gx * gy)
        .map(|i| {
            let (cx, cy) = ((i % gx) as f64, (i / gx) as f64);
            ((cx + rng.random::<f64>()) * cell, (cy + rng.random::<f64>()) * cell)
        })
        .collect();
    let mut id = vec![0usize; w * h];
    let mut boundary = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (cx, cy) = ((px / cell) as isize, (py / cell) as isize);
            let (mut d1, mut d2, mut best) = (f64::INFINITY, f64::INFINITY, 0);
            for j in (cy - 2).max(0)..=(cy + 2).min(gy as isize - 1) {
                for i in (cx - 2).max(0)..=(cx + 2).min(gx as isize - 1) {
                    let k = j as usize * gx + i as usize;
                    let d = ((seeds[k].0 - px).powi(2) + (seeds[k].1 - py).powi(2)).sqrt();
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                        best = k;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
            }
            id[y * w + x] = best;
            // (d2 - d1) / 2 approximates the distance to the bisector
            boundary[y * w + x] = cfg.boundary_width > 0.0 && (d2 - d1) < cfg.boundary_width;
        }
    }
    (id, boundary)
}

fn place_carbides<R: Rng>(cfg: &SceneConfig, rng: &mut R) -> Result<(Vec<Ellipse>, BinaryMask)> {
    let (w, h) = (cfg.width, cfg.height);
    let count = rng.random_range(cfg.carbide_count.0..=cfg.carbide_count.1);
    let level = Normal::new(cfg.carbide.mean, cfg.carbide.sd).map_err(|e| invalid!("carbide intensity: {e}"))?;
    let mut mask = BinaryMask::empty(w, h);
    let mut carbides = Vec::with_capacity(count);
    // pixels occupied or adjacent to a carbide
    let mut blocked = vec![false; w * h];
    for k in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let e = Ellipse {
                cx: rng.random_range(0.0..w as f64),
                cy: rng.random_range(0.0..h as f64),
                a: rng.random_range(cfg.axis_range.0..=cfg.axis_range.1),
                b: rng.random_range(cfg.axis_range.0..=cfg.axis_range.1),
                theta: rng.random_range(0.0..std::f64::consts::PI),
                level: level.sample(rng).clamp(0.0, 1.0),
            };
            let px = e.pixels(w, h);
            if px.is_empty() || px.iter().any(|&(x, y)| blocked[y * w + x]) {
                continue;
            }
            for &(x, y) in &px {
                mask.set(x, y, true);
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        blocked[ny * w + nx] = true;
                    }
                }
            }
            carbides.push(e);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Degenerate(format!(
                "could not place carbide {} of {count} without overlap after {PLACEMENT_RETRIES} attempts",
                k + 1
            )));
        }
    }
    Ok((carbides, mask))
}

fn finish<R: Rng>(mut plane: Vec<f64>, cfg: &SceneConfig, rng: &mut R) -> Result<Image2D> {
    let (w, h) = (cfg.width, cfg.height);
    if cfg.blur_sigma > 0.0 {
        let img = Image2D::new(w, h, plane.iter().map(|&v| v as f32).collect())?;
        plane = gaussian_blur(&img, cfg.blur_sigma as f32)?.data().iter().map(|&v| v as f64).collect();
    }
    let data = plane
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            (v + cfg.noise_sigma * n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Image2D::new(w, h, data)?.with_pixel_size(Some(cfg.pixel_size_nm)))
}

/// Render one scene; the output depends only on `cfg` (including its seed).
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let (carbides, mask) = place_carbides(cfg, &mut stream_rng(cfg.seed, 0))?;
    let mut rng = stream_rng(cfg.seed, 1);
    let (grain_id, boundary) = grains(w, h, cfg, &mut rng);
    let n_grains = grain_id.iter().copied().max().unwrap_or(0) + 1;
    let offsets: Vec<f64> = (0..n_grains)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            cfg.matrix.sd * n
        })
        .collect();
    let tex_a = texture(w, h, cfg.texture_correlation, &mut stream_rng(cfg.seed, 2))?;
    let tex_b = texture(w, h, cfg.texture_correlation, &mut stream_rng(cfg.seed, 3))?;
    let rho = cfg.channel_correlation;
    let rho_c = (1.0 - rho * rho).sqrt();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = angle.sin_cos();
    let diag = ((w * w + h * h) as f64).sqrt().max(1.0);

    // carbide level per pixel, from the label of the covering ellipse
    let mut level = vec![f64::NAN; w * h];
    for e in &carbides {
        for (x, y) in e.pixels(w, h) {
            level[y * w + x] = e.level;
        }
    }

    let mut se = vec![0.0; w * h];
    let mut inl = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ramp = cfg.gradient_amplitude
                * (((x as f64 - w as f64 / 2.0) * gc + (y as f64 - h as f64 / 2.0) * gs) / diag);
            if mask.data()[i] {
                let c = level[i] - cfg.matrix.mean;
                se[i] = level[i] + ramp;
                inl[i] = cfg.inlens_matrix + cfg.inlens_gain * c + ramp;
            } else {
                let g = offsets[grain_id[i]];
                let b = boundary[i] as u8 as f64;
                let t_se = tex_a[i];
                let t_in = rho * tex_a[i] + rho_c * tex_b[i];
                se[i] = cfg.matrix.mean + g + cfg.texture_amplitude * t_se + cfg.boundary_se * b + ramp;
                inl[i] = cfg.inlens_matrix
                    + cfg.inlens_gain * g
                    + cfg.texture_amplitude * t_in
                    + cfg.boundary_inlens * b
                    + ramp;
            }
        }
    }
    let mut noise = stream_rng(cfg.seed, 4);
    let se = finish(se, cfg, &mut noise)?;
    let inl = finish(inl, cfg, &mut noise)?;
    Ok(Scene {
        pair: ChannelPair::new(se, inl)?,
        mask,
        carbides,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{baseline_segment, BaselineConfig};
    use crate::evaluation::{confusion, summarize};
    use crate::rng::derive_seed;

    #[test]
    fn no_carbides_gives_empty_mask() {
        let cfg = SceneConfig {
            carbide_count: (0, 0),
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg).unwrap();
        assert_eq!(s.mask.count(), 0);
        assert!(s.carbides.is_empty());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_scene(&SceneConfig::default().with_seed(3)).unwrap();
        let b = generate_scene(&SceneConfig::default().with_seed(3)).unwrap();
        let c = generate_scene(&SceneConfig::default().with_seed(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pair, c.pair);
        assert_ne!(a.mask, c.mask);
    }

    #[test]
    fn mask_is_the_union_of_ellipses() {
        let s = generate_scene(&SceneConfig::default().with_seed(5)).unwrap();
        let (w, h) = s.mask.dims();
        for y in 0..h {
            for x in 0..w {
                let inside = s.carbides.iter().any(|e| e.contains(x, y));
                assert_eq!(s.mask.get(x, y), inside, "({x}, {y})");
            }
        }
    }

    #[test]
    fn foreground_fraction_bounds() {
        for i in 0..100 {
            let s = generate_scene(&SceneConfig::default().with_seed(derive_seed(11, i))).unwrap();
            let f = s.mask.foreground_fraction();
            assert!(f > 0.005 && f < 0.15, "seed {i}: {f}");
        }
    }

    #[test]
    fn overcrowded_scene_fails() {
        let cfg = SceneConfig {
            width: 20,
            height: 20,
            carbide_count: (50, 50),
            axis_range: (4.0, 5.0),
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Degenerate(_))));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SceneConfig { carbide_count: (5, 2), ..Default::default() },
            SceneConfig { axis_range: (3.0, 1.0), ..Default::default() },
            SceneConfig { carbide: Intensity { mean: 1.5, sd: 0.1 }, ..Default::default() },
            SceneConfig { channel_correlation: 2.0, ..Default::default() },
            SceneConfig { width: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(generate_scene(&cfg).is_err());
        }
    }

    fn baseline_median(cfg: &SceneConfig, n: u64) -> f64 {
        let dices: Vec<f64> = (0..n)
            .map(|i| {
                let s = generate_scene(&cfg.clone().with_seed(derive_seed(100, i))).unwrap();
                let m = baseline_segment(&s.pair, &BaselineConfig::default()).unwrap();
                confusion(&m, &s.mask).unwrap().dice()
            })
            .collect();
        summarize(&dices).unwrap().median
    }

    #[test]
    fn baseline_separates_default_but_not_hard_scenes() {
        let easy = baseline_median(&SceneConfig::default(), 10);
        let hard = baseline_median(&SceneConfig::hard(), 10);
        assert!(easy >= 0.9, "default {easy}");
        assert!(hard < 0.9 && hard > 0.3, "hard {hard}");
    }
}
