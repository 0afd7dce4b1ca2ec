//! Otsu's threshold on a 256-bin histogram over `[0, 1]`.

use crate::error::{Error, Result};
use crate::imagecore::Image2D;

pub const BINS: usize = 256;

#[inline]
pub fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * BINS as f32) as usize).min(BINS - 1)
}

pub fn histogram(img: &Image2D) -> [u64; BINS] {
    let mut hist = [0u64; BINS];
    for &v in img.data() {
        hist[bin_of(v)] += 1;
    }
    hist
}

/// Split index `k` in `1..256` separating bins `< k` (background) from bins
/// `>= k` (foreground) that minimizes the weighted within-class variance
/// `w0 var0 + w1 var1`. Computed as the maximizer of the between-class
/// variance; equal scores resolve to the smallest `k`. `None` when fewer than
/// two bins are occupied.
pub fn otsu_split(hist: &[u64; BINS]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut n0 = 0u64;
    let mut s0 = 0f64;
    let mut best: Option<(usize, f64)> = None;
    for k in 1..BINS {
        n0 += hist[k - 1];
        s0 += (k - 1) as f64 * hist[k - 1] as f64;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (w0, w1) = (n0 as f64, n1 as f64);
        let diff = s0 / w0 - (sum_all - s0) / w1;
        let between = w0 * w1 * diff * diff;
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

/// Intensity threshold `k / 256`; foreground is `v >= threshold`.
pub fn otsu_threshold(img: &Image2D) -> Result<f32> {
    otsu_split(&histogram(img))
        .map(|k| k as f32 / BINS as f32)
        .ok_or_else(|| Error::Degenerate("image has a single intensity level; no Otsu threshold".into()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive within-class variance scan computed two-pass per class.
    pub(crate) fn exhaustive_split(hist: &[u64; BINS]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let total: u64 = hist.iter().sum();
        for k in 1..BINS {
            let class = |range: std::ops::Range<usize>| {
                let n: u64 = hist[range.clone()].iter().sum();
                if n == 0 {
                    return None;
                }
                let mean = range.clone().map(|i| i as f64 * hist[i] as f64).sum::<f64>() / n as f64;
                let var = range.map(|i| hist[i] as f64 * (i as f64 - mean).powi(2)).sum::<f64>() / n as f64;
                Some((n as f64 / total as f64, var))
            };
            let (Some((w0, v0)), Some((w1, v1))) = (class(0..k), class(k..BINS)) else {
                continue;
            };
            let within = w0 * v0 + w1 * v1;
            if best.is_none_or(|(_, b)| within < b) {
                best = Some((k, within));
            }
        }
        best.map(|(k, _)| k)
    }

    #[test]
    fn two_level_image() {
        let img = Image2D::from_fn(10, 10, |x, _| if x < 7 { 0.2 } else { 0.8 });
        let t = otsu_threshold(&img).unwrap();
        assert!(t > 0.2 && t <= 0.8, "{t}");
        assert_eq!(otsu_split(&histogram(&img)), exhaustive_split(&histogram(&img)));
    }

    #[test]
    fn bimodal_histogram() {
        let mut h = [0u64; BINS];
        h[50] = 1000;
        h[200] = 1000;
        let k = otsu_split(&h).unwrap();
        assert!(k > 50 && k <= 200);
        assert_eq!(Some(k), exhaustive_split(&h));
        assert_eq!(k, 51, "ties go to the lowest split");
    }

    #[test]
    fn constant_image_has_no_threshold() {
        assert!(matches!(otsu_threshold(&Image2D::filled(5, 5, 0.4)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn threshold_agrees_with_bins() {
        for k in 1..BINS {
            let t = k as f32 / BINS as f32;
            assert_eq!(bin_of(t), k);
            assert_eq!(bin_of(t - f32::EPSILON), k - 1);
        }
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(counts in proptest::collection::vec(0u64..500, BINS)) {
            let mut h = [0u64; BINS];
            h.copy_from_slice(&counts);
            prop_assert_eq!(otsu_split(&h), exhaustive_split(&h));
        }
    }
}
