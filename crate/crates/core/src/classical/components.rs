use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagecore::BinaryMask;

/// Pixel neighbourhood used for connected components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(invalid!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Connected-component labels. `0` is background; components are numbered
/// from 1 in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// Pixel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl LabelMap {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

fn flood<F: FnMut(usize) -> bool>(
    start: usize,
    w: usize,
    h: usize,
    conn: Connectivity,
    stack: &mut Vec<usize>,
    mut visit: F,
) {
    stack.clear();
    stack.push(start);
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for &(dx, dy) in conn.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if visit(j) {
                stack.push(j);
            }
        }
    }
}

pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> LabelMap {
    let (w, h) = mask.dims();
    let fg = mask.data();
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        let mut size = 1usize;
        flood(start, w, h, conn, &mut stack, |j| {
            if fg[j] && labels[j] == 0 {
                labels[j] = id;
                size += 1;
                true
            } else {
                false
            }
        });
        sizes.push(size);
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        sizes,
    }
}

/// Turn background regions that cannot reach the image border (through
/// 4-connected background) into foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let fg = mask.data();
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    let border = (0..w)
        .flat_map(|x| [x, (h.saturating_sub(1)) * w + x])
        .chain((0..h).flat_map(|y| [y * w, y * w + w.saturating_sub(1)]));
    let seeds: Vec<usize> = if w == 0 || h == 0 { Vec::new() } else { border.collect() };
    for s in seeds {
        if fg[s] || outside[s] {
            continue;
        }
        outside[s] = true;
        flood(s, w, h, Connectivity::Four, &mut stack, |j| {
            if !fg[j] && !outside[j] {
                outside[j] = true;
                true
            } else {
                false
            }
        });
    }
    let data = outside.into_iter().map(|o| !o).collect();
    BinaryMask::new(w, h, data).expect("same dims")
}

/// Erase foreground components with fewer than `min_size` pixels.
pub fn remove_small(mask: &BinaryMask, min_size: usize, conn: Connectivity) -> Result<BinaryMask> {
    if min_size == 0 {
        return Err(invalid!("min component size must be at least 1"));
    }
    let lm = label_components(mask, conn);
    let data = lm
        .labels
        .iter()
        .map(|&l| l != 0 && lm.sizes[l as usize - 1] >= min_size)
        .collect();
    BinaryMask::new(lm.width, lm.height, data)
}
