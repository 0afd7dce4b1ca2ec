//! Handcrafted baseline segmentation.
//!
//! Stages, in order: blend the two detector channels, Gaussian denoise,
//! white top-hat background removal, Otsu threshold (bright phase is
//! foreground), fill enclosed holes, drop tiny components.

mod components;
mod filter;
mod morphology;
mod threshold;

use serde::{Deserialize, Serialize};

pub use components::{fill_holes, label_components, remove_small, Connectivity, LabelMap};
pub use filter::{gaussian_blur, gaussian_kernel};
pub use morphology::{
    dilate, erode, opening, white_tophat, white_tophat_with, ElementShape, StructuringElement,
};
pub use threshold::{bin_of, histogram, otsu_split, otsu_threshold, BINS};

pub use crate::imagecore::BinaryMask;
use crate::error::{invalid, Result};
use crate::imagecore::{merge_channels, ChannelPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub merge_ratio: f32,
    pub denoise_sigma: f32,
    pub tophat_radius: usize,
    pub min_component_size: usize,
    pub connectivity: Connectivity,
    pub element: ElementShape,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            merge_ratio: 0.5,
            denoise_sigma: 1.0,
            tophat_radius: 30,
            min_component_size: 3,
            connectivity: Connectivity::Eight,
            element: ElementShape::Disk,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.merge_ratio) {
            return Err(invalid!("merge_ratio {} outside [0,1]", self.merge_ratio));
        }
        if !(self.denoise_sigma > 0.0) {
            return Err(invalid!("denoise_sigma must be positive"));
        }
        if self.tophat_radius < 1 {
            return Err(invalid!("tophat_radius must be at least 1"));
        }
        if self.min_component_size < 1 {
            return Err(invalid!("min_component_size must be at least 1"));
        }
        Ok(())
    }
}

/// Run the full classical pipeline on one image pair.
pub fn baseline_segment(pair: &ChannelPair, cfg: &BaselineConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let merged = merge_channels(pair, cfg.merge_ratio)?;
    let smooth = gaussian_blur(&merged, cfg.denoise_sigma)?;
    let flat = white_tophat_with(&smooth, cfg.element, cfg.tophat_radius)?;
    let mask = match otsu_threshold(&flat) {
        Ok(t) => BinaryMask::from_threshold(&flat, t),
        // nothing left after background removal
        Err(crate::Error::Degenerate(_)) => BinaryMask::empty(flat.width(), flat.height()),
        Err(e) => return Err(e),
    };
    let filled = fill_holes(&mask);
    remove_small(&filled, cfg.min_component_size, cfg.connectivity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Image2D;

    #[test]
    fn speck_is_removed() {
        let img = Image2D::from_fn(64, 64, |x, y| {
            let blob = (x as f32 - 40.0).powi(2) + (y as f32 - 20.0).powi(2) < 36.0;
            let speck = y == 50 && (10..12).contains(&x);
            if blob { 0.9 } else if speck { 0.9 } else { 0.2 }
        });
        let pair = ChannelPair::new(img.clone(), img).unwrap();
        let cfg = BaselineConfig {
            denoise_sigma: 0.3,
            ..Default::default()
        };
        let m = baseline_segment(&pair, &cfg).unwrap();
        assert!(m.get(40, 20));
        assert!(!m.get(10, 50) && !m.get(11, 50));
    }

    #[test]
    fn flat_scene_is_empty() {
        let img = Image2D::filled(40, 40, 0.5);
        let pair = ChannelPair::new(img.clone(), img).unwrap();
        assert_eq!(baseline_segment(&pair, &BaselineConfig::default()).unwrap().count(), 0);
    }

    #[test]
    fn invalid_config() {
        let img = Image2D::filled(8, 8, 0.5);
        let pair = ChannelPair::new(img.clone(), img).unwrap();
        let cfg = BaselineConfig {
            denoise_sigma: 0.0,
            ..Default::default()
        };
        assert!(baseline_segment(&pair, &cfg).is_err());
    }
}
