use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagecore::Image2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    /// Mean predicted probability; `NaN` for an empty bin.
    pub mean_pred: f64,
    /// Fraction of positive targets; `NaN` for an empty bin.
    pub observed: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<ReliabilityBin>,
    pub total: u64,
    /// Expected calibration error: count-weighted `|mean_pred - observed|`.
    pub ece: f64,
}

impl ReliabilityDiagram {
    /// Rows `bin_lo,bin_hi,mean_pred,observed,count` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,mean_pred,observed,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.mean_pred, b.observed, b.count));
        }
        s
    }
}

/// Lower edge of bin `k` of `n`.
#[inline]
pub fn bin_edge(k: usize, n: usize) -> f64 {
    k as f64 / n as f64
}

/// Bin of `p` among `n` equal-width bins: `edge(k) <= p < edge(k+1)`, with
/// the last bin closed on the right.
pub fn bin_index(p: f64, n: usize) -> usize {
    let mut k = ((p * n as f64) as usize).min(n - 1);
    while k > 0 && p < bin_edge(k, n) {
        k -= 1;
    }
    while k + 1 < n && p >= bin_edge(k + 1, n) {
        k += 1;
    }
    k
}

pub fn reliability<P: Copy + Into<f64>, Y: Copy + Into<f64>>(probs: &[P], targets: &[Y], bins: usize) -> Result<ReliabilityDiagram> {
    if bins < 2 {
        return Err(invalid!("need at least 2 bins, got {bins}"));
    }
    if probs.is_empty() {
        return Err(invalid!("no predictions"));
    }
    if probs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} targets", probs.len(), targets.len())));
    }
    let mut count = vec![0u64; bins];
    let mut sum_p = vec![0.0f64; bins];
    let mut sum_y = vec![0.0f64; bins];
    for (&p, &y) in probs.iter().zip(targets) {
        let (p, y) = (p.into(), y.into());
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid!("probability {p} outside [0, 1]"));
        }
        let k = bin_index(p, bins);
        count[k] += 1;
        sum_p[k] += p;
        sum_y[k] += y;
    }
    let total = probs.len() as u64;
    let mut ece = 0.0;
    let out = (0..bins)
        .map(|k| {
            let (mean_pred, observed) = if count[k] == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let c = count[k] as f64;
                (sum_p[k] / c, sum_y[k] / c)
            };
            if count[k] > 0 {
                ece += count[k] as f64 / total as f64 * (mean_pred - observed).abs();
            }
            ReliabilityBin {
                lo: bin_edge(k, bins),
                hi: bin_edge(k + 1, bins),
                mean_pred,
                observed,
                count: count[k],
            }
        })
        .collect();
    Ok(ReliabilityDiagram { bins: out, total, ece })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceLevel {
    Low,
    Medium,
    High,
}

/// Thresholds on `max(p, 1 - p)` separating low / medium / high confidence.
pub const CONFIDENCE_THRESHOLDS: (f32, f32) = (0.7, 0.9);

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub confidence: Image2D,
    pub levels: Vec<ConfidenceLevel>,
}

impl ConfidenceMap {
    pub fn level_at(&self, x: usize, y: usize) -> ConfidenceLevel {
        self.levels[y * self.confidence.width() + x]
    }
}

pub fn confidence_level(c: f32) -> ConfidenceLevel {
    let (lo, hi) = CONFIDENCE_THRESHOLDS;
    if c < lo {
        ConfidenceLevel::Low
    } else if c < hi {
        ConfidenceLevel::Medium
    } else {
        ConfidenceLevel::High
    }
}

/// Per-pixel `max(p, 1 - p)` and its three-level quantization.
pub fn confidence_map(probs: &Image2D) -> ConfidenceMap {
    let (w, h) = probs.dims();
    let conf: Vec<f32> = probs.data().iter().map(|&p| p.max(1.0 - p)).collect();
    let levels = conf.iter().map(|&c| confidence_level(c)).collect();
    ConfidenceMap {
        confidence: Image2D::new(w, h, conf).expect("same dims").with_pixel_size(probs.pixel_size_nm()),
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_confidence() {
        let d = reliability(&[1.0; 5], &[1.0; 5], 10).unwrap();
        assert_eq!(d.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(d.bins[9].count, 5);
        assert_eq!(d.bins[9].observed, 1.0);
        assert_eq!(d.ece, 0.0);
    }

    #[test]
    fn matched_half() {
        let d = reliability(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0], 10).unwrap();
        assert_eq!(d.ece, 0.0);
        assert_eq!(d.bins[5].count, 4);
    }

    #[test]
    fn overconfident_negatives() {
        let d = reliability(&[0.9; 8], &[0.0; 8], 10).unwrap();
        assert!((d.ece - 0.9).abs() < 1e-15);
    }

    #[test]
    fn argument_checks() {
        assert!(reliability(&[0.5], &[1.0], 1).is_err());
        assert!(reliability::<f64, f64>(&[], &[], 10).is_err());
        assert!(reliability(&[1.5], &[1.0], 10).is_err());
        assert!(reliability(&[0.5, 0.2], &[1.0], 10).is_err());
    }

    #[test]
    fn confidence_examples() {
        let m = confidence_map(&Image2D::new(3, 1, vec![0.5, 0.0, 0.8]).unwrap());
        assert_eq!(m.confidence.data(), &[0.5, 1.0, 0.8]);
        assert_eq!(m.levels, vec![ConfidenceLevel::Low, ConfidenceLevel::High, ConfidenceLevel::Medium]);
    }

    #[test]
    fn edges_are_left_closed() {
        for n in [2usize, 3, 7, 10] {
            for k in 0..n {
                assert_eq!(bin_index(bin_edge(k, n), n), k);
            }
            assert_eq!(bin_index(1.0, n), n - 1);
        }
    }

    fn naive(probs: &[f64], targets: &[f64], bins: usize) -> (Vec<u64>, f64) {
        let mut counts = vec![0u64; bins];
        let mut ece = 0.0;
        for k in 0..bins {
            let (lo, hi) = (bin_edge(k, bins), bin_edge(k + 1, bins));
            let last = k == bins - 1;
            let members: Vec<usize> = (0..probs.len())
                .filter(|&i| probs[i] >= lo && (probs[i] < hi || (last && probs[i] <= hi)))
                .collect();
            counts[k] = members.len() as u64;
            if !members.is_empty() {
                let c = members.len() as f64;
                let mp = members.iter().map(|&i| probs[i]).sum::<f64>() / c;
                let ob = members.iter().map(|&i| targets[i]).sum::<f64>() / c;
                ece += c / probs.len() as f64 * (mp - ob).abs();
            }
        }
        (counts, ece)
    }

    proptest! {
        #[test]
        fn matches_full_scan(
            pairs in proptest::collection::vec((prop_oneof![0.0f64..=1.0, Just(0.3), Just(0.1), Just(1.0)], any::<bool>()), 1..200),
            bins in 2usize..20,
        ) {
            let p: Vec<f64> = pairs.iter().map(|v| v.0).collect();
            let y: Vec<f64> = pairs.iter().map(|v| if v.1 { 1.0 } else { 0.0 }).collect();
            let d = reliability(&p, &y, bins).unwrap();
            let (counts, ece) = naive(&p, &y, bins);
            prop_assert_eq!(d.bins.iter().map(|b| b.count).collect::<Vec<_>>(), counts);
            prop_assert_eq!(d.bins.iter().map(|b| b.count).sum::<u64>(), p.len() as u64);
            prop_assert_eq!(d.ece, ece);
            prop_assert!(d.bins.iter().filter(|b| b.count > 0).all(|b| (0.0..=1.0).contains(&b.observed)));
        }
    }
}
