use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagecore::BinaryMask;

/// Pixel-level confusion counts of a predicted mask against a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    #[inline]
    pub fn add(&mut self, pred: bool, target: bool) {
        match (pred, target) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dice(&self) -> f64 {
        dice_coefficient(self)
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

pub fn confusion(pred: &BinaryMask, target: &BinaryMask) -> Result<Confusion> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        c.add(p, t);
    }
    Ok(c)
}

/// `2TP / (2TP + FP + FN)`; two empty masks score 1.
pub fn dice_coefficient(c: &Confusion) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

/// Dice of every `tile`x`tile` square on the top-left anchored grid, in
/// raster order. Partial border strips are skipped.
pub fn tile_dices(pred: &BinaryMask, target: &BinaryMask, tile: usize) -> Result<Vec<f64>> {
    if tile == 0 {
        return Err(invalid!("tile size must be at least 1"));
    }
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch("prediction and target differ in size".into()));
    }
    let (w, h) = pred.dims();
    let mut out = Vec::with_capacity((w / tile) * (h / tile));
    for ty in 0..h / tile {
        for tx in 0..w / tile {
            let mut c = Confusion::default();
            for y in ty * tile..(ty + 1) * tile {
                let row = y * w;
                for x in tx * tile..(tx + 1) * tile {
                    c.add(pred.data()[row + x], target.data()[row + x]);
                }
            }
            out.push(c.dice());
        }
    }
    Ok(out)
}

/// Median and interquartile range of a list of Dice values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<DiceSummary> {
    if values.is_empty() {
        return Err(invalid!("cannot summarize an empty list"));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid!("Dice value {v} outside [0, 1]"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(DiceSummary {
        n: s.len(),
        median: quantile_sorted(&s, 0.5),
        q1: quantile_sorted(&s, 0.25),
        q3: quantile_sorted(&s, 0.75),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::dice_loss;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn hand_counted_example() {
        let target = mask(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let pred = mask(4, 4, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let c = confusion(&pred, &target).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 2, 2, 10));
        assert_eq!(dice_coefficient(&c), 0.5);
    }

    #[test]
    fn identity_and_inversion() {
        let t = mask(5, 3, &[(1, 1), (2, 2), (4, 0)]);
        let c = confusion(&t, &t).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (3, 0, 0));
        assert_eq!(c.dice(), 1.0);
        let c = confusion(&t.complement(), &t).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(c.dice(), 0.0);
        assert_eq!(confusion(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 3)).unwrap().dice(), 1.0);
        assert!(confusion(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 4)).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[0.5]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (0.5, 0.5, 0.5));
        assert_eq!(summarize(&[1.0, 0.0, 0.5]).unwrap().median, 0.5);
        let s = summarize(&[0.4, 0.1, 0.3, 0.2]).unwrap();
        // order statistics at positions 0.75, 1.5 and 2.25
        assert!((s.median - 0.25).abs() < 1e-15);
        assert!((s.q1 - 0.175).abs() < 1e-15);
        assert!((s.q3 - 0.325).abs() < 1e-15);
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[1.5]).is_err());
    }

    #[test]
    fn tile_grid() {
        let t = BinaryMask::from_fn(8, 6, |x, _| x < 4);
        let p = BinaryMask::from_fn(8, 6, |x, y| x < 4 && y < 2);
        let d = tile_dices(&p, &t, 3).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d[1], 2.0 * 2.0 / (2.0 * 2.0 + 1.0));
        assert_eq!(d[3], 0.0);
    }

    fn masks() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            (proptest::collection::vec(any::<bool>(), w * h), proptest::collection::vec(any::<bool>(), w * h))
                .prop_map(move |(a, b)| (BinaryMask::new(w, h, a).unwrap(), BinaryMask::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn counts_and_symmetry((a, b) in masks()) {
            let ab = confusion(&a, &b).unwrap();
            let ba = confusion(&b, &a).unwrap();
            prop_assert_eq!(ab.total(), (a.width() * a.height()) as u64);
            prop_assert_eq!((ab.fp, ab.fn_), (ba.fn_, ba.fp));
            prop_assert_eq!(ab.dice(), ba.dice());
        }

        #[test]
        fn one_minus_dice_is_the_loss((a, b) in masks()) {
            let to_f = |m: &BinaryMask| m.data().iter().map(|&v| v as u8 as f64).collect::<Vec<_>>();
            let d = confusion(&a, &b).unwrap().dice();
            let loss = dice_loss(&to_f(&a), &to_f(&b), 0.0).unwrap();
            prop_assert!((1.0 - d - loss).abs() < 1e-12);
        }

        #[test]
        fn summary_is_ordered_and_permutation_invariant(
            mut v in proptest::collection::vec(0.0f64..=1.0, 1..50),
            seed in any::<u64>(),
        ) {
            let s = summarize(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            use rand::seq::SliceRandom;
            v.shuffle(&mut crate::rng::stream_rng(seed, 0));
            prop_assert_eq!(summarize(&v).unwrap(), s);
        }
    }
}
