//! Image containers, file I/O and preprocessing.
//!
//! Intensities are stored as `f32` in row-major order. After loading with
//! normalization every value lies in `[0, 1]`: 8-bit data is divided by 255
//! and 16-bit data by 65535.

mod augment;
mod tiling;

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageReader};

pub use augment::{augment, AugmentationSpec};
pub use tiling::{
    read_manifest, read_tileset, reassemble, split, split_by_source, tile, write_manifest,
    write_tileset, Partition, Splits, Tile, TileManifest, TileRecord, TileSet, MANIFEST_NAME,
};

use crate::error::{invalid, Error, Result};
use crate::fsutil;

/// Single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f32>,
    pixel_size_nm: Option<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Image2D {
            width,
            height,
            data,
            pixel_size_nm: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image2D {
            width,
            height,
            data: vec![value; width * height],
            pixel_size_nm: None,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image2D {
            width,
            height,
            data,
            pixel_size_nm: None,
        }
    }

    pub fn with_pixel_size(mut self, nm: Option<f64>) -> Self {
        self.pixel_size_nm = nm;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_size_nm(&self) -> Option<f64> {
        self.pixel_size_nm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copy of the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image2D> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(invalid!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
                self.width,
                self.height
            ));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.row(y)[x0..x0 + w]);
        }
        Ok(Image2D {
            width: w,
            height: h,
            data,
            pixel_size_nm: self.pixel_size_nm,
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Foreground/background raster; `true` marks carbide pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} flags for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }

    /// Pixels whose value is at least `threshold`.
    pub fn from_threshold(img: &Image2D, threshold: f32) -> Self {
        BinaryMask {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v >= threshold).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<BinaryMask> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(invalid!(
                "window {w}x{h} at ({x0},{y0}) exceeds {}x{} mask",
                self.width,
                self.height
            ));
        }
        Ok(BinaryMask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// 0.0 / 1.0 intensities.
    pub fn to_image(&self) -> Image2D {
        Image2D {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            pixel_size_nm: None,
        }
    }
}

/// The two co-registered detector signals of one field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    se: Image2D,
    inlens: Image2D,
}

impl ChannelPair {
    pub fn new(se: Image2D, inlens: Image2D) -> Result<Self> {
        if se.dims() != inlens.dims() {
            return Err(Error::ShapeMismatch(format!(
                "SE is {}x{}, InLens is {}x{}",
                se.width, se.height, inlens.width, inlens.height
            )));
        }
        if se.pixel_size_nm != inlens.pixel_size_nm {
            return Err(Error::ShapeMismatch(
                "SE and InLens pixel sizes differ".to_string(),
            ));
        }
        Ok(ChannelPair { se, inlens })
    }

    pub fn se(&self) -> &Image2D {
        &self.se
    }

    pub fn inlens(&self) -> &Image2D {
        &self.inlens
    }

    pub fn dims(&self) -> (usize, usize) {
        self.se.dims()
    }

    pub fn into_parts(self) -> (Image2D, Image2D) {
        (self.se, self.inlens)
    }

    pub fn crop_rows(&self, top: usize, bottom: usize) -> Result<ChannelPair> {
        Ok(ChannelPair {
            se: crop_rows(&self.se, top, bottom)?,
            inlens: crop_rows(&self.inlens, top, bottom)?,
        })
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Read an 8- or 16-bit single-channel PNG/TIFF.
///
/// With `normalize` set, values are divided by the bit-depth maximum;
/// otherwise raw integer levels are returned as floats.
pub fn load_image(path: impl AsRef<Path>, normalize: bool) -> Result<Image2D> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => {
            let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
            buf.into_raw().into_iter().map(|v| v as f32 * scale).collect()
        }
        DynamicImage::ImageLuma16(buf) => {
            let scale = if normalize { 1.0 / 65535.0 } else { 1.0 };
            buf.into_raw()
                .into_iter()
                .map(|v| (v as f64 * scale) as f32)
                .collect()
        }
        other => {
            let color = other.color();
            return Err(if color.channel_count() > 1 {
                Error::UnsupportedImage(format!(
                    "{}: {} channels, expected a single grayscale channel",
                    path.display(),
                    color.channel_count()
                ))
            } else {
                Error::UnsupportedImage(format!(
                    "{}: {} bits per sample, expected 8 or 16",
                    path.display(),
                    color.bits_per_pixel()
                ))
            });
        }
    };
    Image2D::new(w, h, data)
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(bytes)
}

/// Write `[0,1]` intensities as a 16-bit grayscale PNG.
pub fn save_image_png16(path: impl AsRef<Path>, img: &Image2D) -> Result<()> {
    let raw: Vec<u16> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        img.width as u32,
        img.height as u32,
        raw,
    )
    .ok_or_else(|| Error::Format("image buffer size".into()))?;
    fsutil::write_atomic(path, &encode_png(DynamicImage::ImageLuma16(buf))?)
}

/// Write `[0,1]` intensities as an 8-bit grayscale PNG.
pub fn save_image_png8(path: impl AsRef<Path>, img: &Image2D) -> Result<()> {
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf =
        image::GrayImage::from_raw(img.width as u32, img.height as u32, raw)
            .ok_or_else(|| Error::Format("image buffer size".into()))?;
    fsutil::write_atomic(path, &encode_png(DynamicImage::ImageLuma8(buf))?)
}

/// Write a mask as an 8-bit PNG, 0 = background, 255 = carbide.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .ok_or_else(|| Error::Format("image buffer size".into()))?;
    fsutil::write_atomic(path, &encode_png(DynamicImage::ImageLuma8(buf))?)
}

/// Read a grayscale mask; pixels at or above half the bit-depth maximum are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_image(path, true)?;
    Ok(BinaryMask::from_threshold(&img, 0.5))
}

/// Remove `top` rows from the top and `bottom` rows from the bottom
/// (metadata bars). Retained pixels are copied unchanged.
pub fn crop_rows(img: &Image2D, top: usize, bottom: usize) -> Result<Image2D> {
    if top + bottom >= img.height {
        return Err(invalid!(
            "cropping {top}+{bottom} rows from an image of height {}",
            img.height
        ));
    }
    let h = img.height - top - bottom;
    Ok(Image2D {
        width: img.width,
        height: h,
        data: img.data[top * img.width..(top + h) * img.width].to_vec(),
        pixel_size_nm: img.pixel_size_nm,
    })
}

/// Convex blend `ratio * SE + (1 - ratio) * InLens`, clamped to `[0,1]`.
pub fn merge_channels(pair: &ChannelPair, ratio: f32) -> Result<Image2D> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(invalid!("merge ratio {ratio} outside [0,1]"));
    }
    let data = pair
        .se
        .data
        .iter()
        .zip(&pair.inlens.data)
        .map(|(&a, &b)| (ratio * a + (1.0 - ratio) * b).clamp(0.0, 1.0))
        .collect();
    Ok(Image2D {
        width: pair.se.width,
        height: pair.se.height,
        data,
        pixel_size_nm: pair.se.pixel_size_nm,
    })
}
