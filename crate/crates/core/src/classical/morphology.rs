//! Grey-level erosion, dilation, opening and white top-hat.
//!
//! A flat structuring element is stored as horizontal chords: for every row
//! offset `dy` it covers the columns `-half..=half`. Erosion then reduces to
//! one sliding-window minimum per chord, computed with the van Herk /
//! Gil-Werman scheme in three comparisons per pixel regardless of width. For
//! a disk of radius `r` the cost is `O(r)` per pixel instead of `O(r^2)`.
//!
//! Pixels outside the image are ignored (the element is clipped), which keeps
//! opening anti-extensive and idempotent up to the border.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagecore::Image2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    #[default]
    Disk,
    Square,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    radius: usize,
    /// `(dy, half_width)` pairs.
    chords: Vec<(isize, usize)>,
}

impl StructuringElement {
    /// Discrete Euclidean ball `{(dx, dy) : dx^2 + dy^2 <= r^2}`.
    pub fn disk(radius: usize) -> Self {
        let r = radius as i64;
        let chords = (-r..=r)
            .map(|dy| {
                let rem = r * r - dy * dy;
                let mut half = (rem as f64).sqrt() as i64;
                while half * half > rem {
                    half -= 1;
                }
                while (half + 1) * (half + 1) <= rem {
                    half += 1;
                }
                (dy as isize, half as usize)
            })
            .collect();
        StructuringElement { radius, chords }
    }

    /// `(2r+1) x (2r+1)` square.
    pub fn square(radius: usize) -> Self {
        let r = radius as isize;
        StructuringElement {
            radius,
            chords: (-r..=r).map(|dy| (dy, radius)).collect(),
        }
    }

    pub fn new(shape: ElementShape, radius: usize) -> Self {
        match shape {
            ElementShape::Disk => Self::disk(radius),
            ElementShape::Square => Self::square(radius),
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn contains(&self, dx: isize, dy: isize) -> bool {
        let r = self.radius as isize;
        if dy < -r || dy > r {
            return false;
        }
        let half = self.chords[(dy + r) as usize].1 as isize;
        dx.abs() <= half
    }

    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        self.chords
            .iter()
            .flat_map(|&(dy, half)| (-(half as isize)..=half as isize).map(move |dx| (dx, dy)))
    }
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline(always)]
    fn pick(self, a: f32, b: f32) -> f32 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }

    fn identity(self) -> f32 {
        match self {
            Extremum::Min => f32::INFINITY,
            Extremum::Max => f32::NEG_INFINITY,
        }
    }
}

#[derive(Default)]
struct Scratch {
    padded: Vec<f32>,
    prefix: Vec<f32>,
    suffix: Vec<f32>,
}

/// `out[x] = op(row[x - half ..= x + half])`, clipped to the row.
fn sliding_extremum(row: &[f32], half: usize, op: Extremum, s: &mut Scratch, out: &mut [f32]) {
    let n = row.len();
    if half == 0 {
        out.copy_from_slice(row);
        return;
    }
    let k = 2 * half + 1;
    let len = n + 2 * half;
    let id = op.identity();
    s.padded.clear();
    s.padded.resize(len, id);
    s.padded[half..half + n].copy_from_slice(row);
    s.prefix.resize(len, id);
    s.suffix.resize(len, id);

    let a = &s.padded;
    for start in (0..len).step_by(k) {
        let end = (start + k).min(len);
        let mut acc = id;
        for j in start..end {
            acc = op.pick(acc, a[j]);
            s.prefix[j] = acc;
        }
        let mut acc = id;
        for j in (start..end).rev() {
            acc = op.pick(acc, a[j]);
            s.suffix[j] = acc;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = op.pick(s.suffix[i], s.prefix[i + k - 1]);
    }
}

fn morph(img: &Image2D, se: &StructuringElement, op: Extremum) -> Image2D {
    let (w, h) = img.dims();
    let src = img.data();
    let mut out = vec![op.identity(); w * h];
    let mut tmp = vec![0f32; w];
    let mut scratch = Scratch::default();
    for y in 0..h {
        let orow = &mut out[y * w..(y + 1) * w];
        for &(dy, half) in &se.chords {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let sy = sy as usize;
            sliding_extremum(&src[sy * w..(sy + 1) * w], half, op, &mut scratch, &mut tmp);
            for (o, &t) in orow.iter_mut().zip(&tmp) {
                *o = op.pick(*o, t);
            }
        }
    }
    Image2D::new(w, h, out)
        .expect("same dims")
        .with_pixel_size(img.pixel_size_nm())
}

/// Minimum over the element centred at each pixel.
pub fn erode(img: &Image2D, se: &StructuringElement) -> Image2D {
    morph(img, se, Extremum::Min)
}

/// Maximum over the (symmetric) element centred at each pixel.
pub fn dilate(img: &Image2D, se: &StructuringElement) -> Image2D {
    morph(img, se, Extremum::Max)
}

pub fn opening(img: &Image2D, se: &StructuringElement) -> Image2D {
    dilate(&erode(img, se), se)
}

/// `img - opening(img)` with a disk of the given radius.
pub fn white_tophat(img: &Image2D, radius: usize) -> Result<Image2D> {
    white_tophat_with(img, ElementShape::Disk, radius)
}

pub fn white_tophat_with(img: &Image2D, shape: ElementShape, radius: usize) -> Result<Image2D> {
    if radius == 0 {
        return Err(invalid!("top-hat radius must be at least 1"));
    }
    let (w, h) = img.dims();
    if 2 * radius > w.min(h) {
        log::warn!("top-hat radius {radius} exceeds half the smaller image side ({w}x{h})");
    }
    let opened = opening(img, &StructuringElement::new(shape, radius));
    let data = img
        .data()
        .iter()
        .zip(opened.data())
        .map(|(&v, &o)| (v - o).max(0.0))
        .collect();
    Ok(Image2D::new(w, h, data)?.with_pixel_size(img.pixel_size_nm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(img: &Image2D, se: &StructuringElement, min: bool) -> Image2D {
        let (w, h) = img.dims();
        Image2D::from_fn(w, h, |x, y| {
            let mut acc = if min { f32::INFINITY } else { f32::NEG_INFINITY };
            for (dx, dy) in se.offsets() {
                let (sx, sy) = (x as isize + dx, y as isize + dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    let v = img.get(sx as usize, sy as usize);
                    acc = if min { acc.min(v) } else { acc.max(v) };
                }
            }
            acc
        })
    }

    fn quantized(w: usize, h: usize, seed: u64) -> Image2D {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Image2D::from_fn(w, h, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) % 256) as f32 / 255.0
        })
    }

    #[test]
    fn disk_matches_euclidean_definition() {
        for r in [1usize, 2, 5, 30] {
            let se = StructuringElement::disk(r);
            let ri = r as isize;
            for dy in -ri - 1..=ri + 1 {
                for dx in -ri - 1..=ri + 1 {
                    assert_eq!(se.contains(dx, dy), dx * dx + dy * dy <= ri * ri, "r={r} ({dx},{dy})");
                }
            }
        }
    }

    #[test]
    fn matches_brute_force() {
        for (r, shape) in [(1, ElementShape::Disk), (3, ElementShape::Disk), (4, ElementShape::Square), (7, ElementShape::Disk)] {
            let img = quantized(23, 19, r as u64);
            let se = StructuringElement::new(shape, r);
            assert_eq!(erode(&img, &se), brute(&img, &se, true));
            assert_eq!(dilate(&img, &se), brute(&img, &se, false));
        }
    }

    #[test]
    fn constant_image_tophat_is_zero() {
        let img = Image2D::filled(40, 40, 0.6);
        assert!(white_tophat(&img, 5).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_square_survives_large_radius_tophat() {
        let img = Image2D::from_fn(64, 64, |x, y| {
            if (30..33).contains(&x) && (20..23).contains(&y) { 1.0 } else { 0.0 }
        });
        let se = StructuringElement::disk(30);
        let oracle_open = brute(&brute(&img, &se, true), &se, false);
        assert!(oracle_open.data().iter().all(|&v| v == 0.0));
        assert_eq!(white_tophat(&img, 30).unwrap(), img);
    }

    #[test]
    fn ramp_is_removed_and_bumps_kept() {
        let (w, h) = (96, 96);
        let r = 6usize;
        let bumps = [(30.0f32, 40.0f32), (60.0, 55.0)];
        let bump = |x: f32, y: f32| -> f32 {
            bumps
                .iter()
                .map(|&(bx, by)| 0.2 * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
                .sum()
        };
        let ramp = |x: usize, y: usize| 0.1 + 0.003 * x as f32 + 0.002 * y as f32;
        let flat = Image2D::from_fn(w, h, ramp);
        let bumpy = Image2D::from_fn(w, h, |x, y| ramp(x, y) + bump(x as f32, y as f32));

        let se = StructuringElement::disk(r);
        let oracle = brute(&brute(&flat, &se, true), &se, false);
        let th = white_tophat(&flat, r).unwrap();
        for y in 2 * r..h - 2 * r {
            for x in 2 * r..w - 2 * r {
                assert!(th.get(x, y) < 1e-6, "ramp residue {} at ({x},{y})", th.get(x, y));
                assert!((flat.get(x, y) - oracle.get(x, y)).abs() < 1e-6);
            }
        }
        let tb = white_tophat(&bumpy, r).unwrap();
        for &(bx, by) in &bumps {
            let v = tb.get(bx as usize, by as usize);
            assert!(v > 0.17 && v <= 0.2 + 1e-5, "bump height {v}");
        }
    }

    #[test]
    fn zero_radius_rejected() {
        assert!(white_tophat(&Image2D::filled(4, 4, 0.0), 0).is_err());
    }

    #[test]
    fn oversized_radius_is_not_fatal() {
        let img = quantized(10, 10, 2);
        let out = white_tophat(&img, 8).unwrap();
        assert_eq!(out.dims(), (10, 10));
    }

    proptest! {
        #[test]
        fn tophat_is_bounded_and_opening_idempotent(seed in any::<u64>(), r in 1usize..6, w in 1usize..30, h in 1usize..30) {
            let img = quantized(w, h, seed);
            let se = StructuringElement::disk(r);
            let open = opening(&img, &se);
            prop_assert_eq!(opening(&open, &se), open.clone());
            let th = white_tophat(&img, r).unwrap();
            for ((&t, &v), &o) in th.data().iter().zip(img.data()).zip(open.data()) {
                prop_assert!(o <= v);
                prop_assert!(t >= 0.0 && t <= v);
            }
        }
    }
}
