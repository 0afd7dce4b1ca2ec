use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{load_image, load_mask, save_image_png16, save_mask_png, BinaryMask, ChannelPair, Image2D};
use crate::error::{invalid, Error, Result};
use crate::fsutil;
use crate::rng::stream_rng;

/// One square training sample: two input channels plus its target mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    size: usize,
    /// SE plane followed by the InLens plane, each `size * size` values.
    input: Vec<f32>,
    pub target: BinaryMask,
    /// `(row, col)` of the top-left pixel in the source image.
    pub origin: (usize, usize),
    pub source_id: String,
}

impl Tile {
    pub fn new(
        se: &Image2D,
        inlens: &Image2D,
        target: BinaryMask,
        origin: (usize, usize),
        source_id: impl Into<String>,
    ) -> Result<Tile> {
        let size = se.width();
        if se.height() != size || inlens.dims() != (size, size) || target.dims() != (size, size) {
            return Err(Error::ShapeMismatch(
                "tile planes must be square and equally sized".to_string(),
            ));
        }
        let mut input = Vec::with_capacity(2 * size * size);
        input.extend_from_slice(se.data());
        input.extend_from_slice(inlens.data());
        Ok(Tile {
            size,
            input,
            target,
            origin,
            source_id: source_id.into(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Both planes, channel-major.
    pub fn input(&self) -> &[f32] {
        &self.input
    }

    pub(crate) fn input_mut(&mut self) -> &mut [f32] {
        &mut self.input
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.input[c * n..(c + 1) * n]
    }

    pub fn channel_image(&self, c: usize) -> Image2D {
        Image2D::new(self.size, self.size, self.channel(c).to_vec()).expect("square plane")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TileSet {
    pub tile_size: usize,
    pub tiles: Vec<Tile>,
}

impl TileSet {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn extend(&mut self, other: TileSet) -> Result<()> {
        if !self.tiles.is_empty() && other.tile_size != self.tile_size && !other.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "tile sizes {} and {} cannot be combined",
                self.tile_size, other.tile_size
            )));
        }
        if self.tiles.is_empty() {
            self.tile_size = other.tile_size;
        }
        self.tiles.extend(other.tiles);
        Ok(())
    }
}

/// Cut the image pair and its mask into non-overlapping `tile_size` squares
/// on a grid anchored at the top-left corner. Partial strips at the right
/// and bottom borders are discarded.
pub fn tile(
    pair: &ChannelPair,
    mask: &BinaryMask,
    tile_size: usize,
    source_id: &str,
) -> Result<TileSet> {
    let (w, h) = pair.dims();
    if tile_size == 0 {
        return Err(invalid!("tile size must be at least 1"));
    }
    if mask.dims() != (w, h) {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, images are {w}x{h}",
            mask.width(),
            mask.height()
        )));
    }
    if tile_size > w && tile_size > h {
        return Err(invalid!("tile size {tile_size} exceeds image {w}x{h}"));
    }
    let mut tiles = Vec::with_capacity((w / tile_size) * (h / tile_size));
    for ty in 0..h / tile_size {
        for tx in 0..w / tile_size {
            let (x0, y0) = (tx * tile_size, ty * tile_size);
            let se = pair.se().crop(x0, y0, tile_size, tile_size)?;
            let inlens = pair.inlens().crop(x0, y0, tile_size, tile_size)?;
            let target = mask.crop(x0, y0, tile_size, tile_size)?;
            tiles.push(Tile::new(&se, &inlens, target, (y0, x0), source_id)?);
        }
    }
    Ok(TileSet { tile_size, tiles })
}

/// Paste tiles back at their origins into a `width`x`height` canvas.
/// Pixels not covered by any tile are zero / background.
pub fn reassemble(tiles: &[Tile], width: usize, height: usize) -> Result<(ChannelPair, BinaryMask)> {
    let mut se = Image2D::filled(width, height, 0.0);
    let mut inlens = Image2D::filled(width, height, 0.0);
    let mut mask = BinaryMask::empty(width, height);
    for t in tiles {
        let (r0, c0) = t.origin;
        if r0 + t.size > height || c0 + t.size > width {
            return Err(invalid!("tile at {:?} falls outside {width}x{height}", t.origin));
        }
        for y in 0..t.size {
            for x in 0..t.size {
                let i = y * t.size + x;
                se.set(c0 + x, r0 + y, t.channel(0)[i]);
                inlens.set(c0 + x, r0 + y, t.channel(1)[i]);
                mask.set(c0 + x, r0 + y, t.target.get(x, y));
            }
        }
    }
    Ok((ChannelPair::new(se, inlens)?, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: TileSet,
    pub val: TileSet,
    pub test: TileSet,
}

fn check_fractions(fractions: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(invalid!("split fractions must be positive, got {a},{b},{c}"));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(invalid!("split fractions sum to {}, not 1", a + b + c));
    }
    Ok(())
}

/// Partition sizes `(train, val, test)` for `n` items: validation and test
/// get `round(n * f)`, training gets the remainder.
pub(crate) fn partition_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let val = (n as f64 * fractions.1).round() as usize;
    let test = (n as f64 * fractions.2).round() as usize;
    let test = test.min(n - val.min(n));
    let val = val.min(n);
    (n - val - test, val, test)
}

fn membership(n: usize, fractions: (f64, f64, f64), seed: u64) -> Vec<Partition> {
    let (_, nval, ntest) = partition_sizes(n, fractions);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x5917));
    let mut out = vec![Partition::Train; n];
    for &i in &order[..nval] {
        out[i] = Partition::Val;
    }
    for &i in &order[nval..nval + ntest] {
        out[i] = Partition::Test;
    }
    out
}

fn gather(tiles: TileSet, member: impl Fn(usize, &Tile) -> Partition) -> Splits {
    let ts = tiles.tile_size;
    let mut out = Splits {
        train: TileSet { tile_size: ts, tiles: Vec::new() },
        val: TileSet { tile_size: ts, tiles: Vec::new() },
        test: TileSet { tile_size: ts, tiles: Vec::new() },
    };
    for (i, t) in tiles.tiles.into_iter().enumerate() {
        match member(i, &t) {
            Partition::Train => out.train.tiles.push(t),
            Partition::Val => out.val.tiles.push(t),
            Partition::Test => out.test.tiles.push(t),
        }
    }
    out
}

/// Seeded per-tile random split. Tiles keep their relative order inside
/// each partition.
pub fn split(tiles: TileSet, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    check_fractions(fractions)?;
    if tiles.len() < 3 {
        return Err(invalid!("{} tiles cannot fill three partitions", tiles.len()));
    }
    let member = membership(tiles.len(), fractions, seed);
    Ok(gather(tiles, |i, _| member[i]))
}

/// Seeded split that keeps all tiles of one source image together.
pub fn split_by_source(tiles: TileSet, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    check_fractions(fractions)?;
    let mut sources: Vec<String> = tiles.tiles.iter().map(|t| t.source_id.clone()).collect();
    sources.sort();
    sources.dedup();
    if sources.len() < 3 {
        return Err(invalid!("{} source images cannot fill three partitions", sources.len()));
    }
    let member = membership(sources.len(), fractions, seed);
    let by_source: BTreeMap<String, Partition> = sources.into_iter().zip(member).collect();
    Ok(gather(tiles, |_, t| by_source[&t.source_id]))
}

/// `manifest.json` of a tile directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileManifest {
    pub tile_size: usize,
    pub tiles: Vec<TileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileRecord {
    pub se: String,
    pub inlens: String,
    pub mask: String,
    /// `[row, col]` in the source image.
    pub origin: [usize; 2],
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Partition>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write tiles as 16-bit PNG pairs plus 8-bit masks, with a JSON manifest.
pub fn write_tileset(dir: impl AsRef<Path>, set: &TileSet, split: Option<&[Partition]>) -> Result<TileManifest> {
    let dir = dir.as_ref();
    if let Some(s) = split {
        if s.len() != set.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} split labels for {} tiles",
                s.len(),
                set.len()
            )));
        }
    }
    fsutil::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(set.len());
    for (i, t) in set.tiles.iter().enumerate() {
        let rec = TileRecord {
            se: format!("tile_{i:05}_se.png"),
            inlens: format!("tile_{i:05}_inlens.png"),
            mask: format!("tile_{i:05}_mask.png"),
            origin: [t.origin.0, t.origin.1],
            source_id: t.source_id.clone(),
            split: split.map(|s| s[i]),
        };
        save_image_png16(dir.join(&rec.se), &t.channel_image(0))?;
        save_image_png16(dir.join(&rec.inlens), &t.channel_image(1))?;
        save_mask_png(dir.join(&rec.mask), &t.target)?;
        records.push(rec);
    }
    let manifest = TileManifest {
        tile_size: set.tile_size,
        tiles: records,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &TileManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fsutil::write_atomic(dir.join(MANIFEST_NAME), &json)
}

pub fn read_manifest(dir: &Path) -> Result<TileManifest> {
    let bytes = fsutil::read(dir.join(MANIFEST_NAME))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{MANIFEST_NAME}: {e}")))
}

/// Load a tile directory written by [`write_tileset`].
pub fn read_tileset(dir: impl AsRef<Path>) -> Result<(TileSet, Vec<Option<Partition>>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut tiles = Vec::with_capacity(manifest.tiles.len());
    let mut member = Vec::with_capacity(manifest.tiles.len());
    for rec in &manifest.tiles {
        let se = load_image(dir.join(&rec.se), true)?;
        let inlens = load_image(dir.join(&rec.inlens), true)?;
        let mask = load_mask(dir.join(&rec.mask))?;
        if se.dims() != (manifest.tile_size, manifest.tile_size) {
            return Err(Error::Format(format!(
                "{} is {}x{}, manifest says {}",
                rec.se,
                se.width(),
                se.height(),
                manifest.tile_size
            )));
        }
        tiles.push(Tile::new(&se, &inlens, mask, (rec.origin[0], rec.origin[1]), rec.source_id.clone())?);
        member.push(rec.split);
    }
    Ok((
        TileSet {
            tile_size: manifest.tile_size,
            tiles,
        },
        member,
    ))
}
