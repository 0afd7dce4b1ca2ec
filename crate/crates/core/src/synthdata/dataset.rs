use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_scene, SceneConfig};
use crate::error::{invalid, Error, Result};
use crate::fsutil;
use crate::imagecore::{load_image, load_mask, save_image_png16, save_mask_png, BinaryMask, ChannelPair};
use crate::rng::derive_seed;

/// File name of the scene list inside a dataset directory.
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub se: String,
    pub inlens: String,
    pub mask: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub pixel_size_nm: Option<f64>,
    #[serde(default)]
    pub carbides: Option<usize>,
    #[serde(default)]
    pub foreground_fraction: Option<f64>,
}

/// Image directory listing: one SE/InLens/mask triple per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub generator: Option<SceneConfig>,
    pub scenes: Vec<SceneRecord>,
}

/// Write `n` scenes with seeds derived from `cfg.seed` and the scene index.
pub fn generate_dataset(cfg: &SceneConfig, n: usize, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(invalid!("need at least one scene"));
    }
    cfg.validate()?;
    let dir = dir.as_ref();
    fsutil::create_dir_all(dir)?;
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n {
        let seed = derive_seed(cfg.seed, i as u64);
        let scene = generate_scene(&cfg.clone().with_seed(seed))?;
        let id = format!("scene_{i:03}");
        let rec = SceneRecord {
            se: format!("{id}_se.png"),
            inlens: format!("{id}_inlens.png"),
            mask: format!("{id}_mask.png"),
            id,
            seed: Some(seed),
            pixel_size_nm: Some(cfg.pixel_size_nm),
            carbides: Some(scene.carbides.len()),
            foreground_fraction: Some(scene.mask.foreground_fraction()),
        };
        save_image_png16(dir.join(&rec.se), scene.pair.se())?;
        save_image_png16(dir.join(&rec.inlens), scene.pair.inlens())?;
        save_mask_png(dir.join(&rec.mask), &scene.mask)?;
        log::debug!("wrote {} ({} carbides)", rec.id, scene.carbides.len());
        scenes.push(rec);
    }
    let manifest = DatasetManifest {
        generator: Some(cfg.clone()),
        scenes,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fsutil::write_atomic(dir.join(DATASET_MANIFEST), &json)?;
    Ok(manifest)
}

/// Load every scene listed in `dir/dataset.json`.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<(SceneRecord, ChannelPair, BinaryMask)>> {
    let dir = dir.as_ref();
    let bytes = fsutil::read(dir.join(DATASET_MANIFEST))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{DATASET_MANIFEST}: {e}")))?;
    manifest
        .scenes
        .into_iter()
        .map(|rec| {
            let se = load_image(dir.join(&rec.se), true)?.with_pixel_size(rec.pixel_size_nm);
            let inlens = load_image(dir.join(&rec.inlens), true)?.with_pixel_size(rec.pixel_size_nm);
            let mask = load_mask(dir.join(&rec.mask))?;
            let pair = ChannelPair::new(se, inlens)?;
            if mask.dims() != pair.dims() {
                return Err(Error::ShapeMismatch(format!("{}: mask and images differ in size", rec.id)));
            }
            Ok((rec, pair, mask))
        })
        .collect()
}
