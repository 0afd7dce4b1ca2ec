use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// Largest effective sample size for which the automatic choice uses the
/// exact null distribution.
pub const EXACT_MAX_N: usize = 25;

/// Upper limit for a forced exact computation.
const EXACT_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n: usize,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub zeros_dropped: usize,
    /// Always `"wilcox"`: zero differences are discarded before ranking.
    pub zero_method: String,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: WilcoxonMethod,
    pub alpha: f64,
    pub reject: bool,
}

/// Average ranks of `|d|`, doubled so that tied ranks stay integral.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && abs[idx[j]] == abs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j averaged, times two
        let r2 = (i + 1 + j) as u64;
        for &k in &idx[i..j] {
            ranks[k] = r2;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// `P(W+ <= w2 / 2)` under the null, where every sign is a fair coin.
/// Works on doubled ranks; probabilities are accumulated by halving.
fn exact_lower_tail(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut dist = vec![0.0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach + r).rev() {
            let keep = if s <= reach { dist[s] } else { 0.0 };
            let add = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * (keep + add);
        }
        reach += r;
    }
    dist[..=(w2 as usize).min(total as usize)].iter().sum()
}

fn normal_p(n: usize, w: f64, ties: &[usize]) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    // w is the smaller of W+ and W-, so w <= mean
    let z = ((w - mean + 0.5) / var.sqrt()).min(0.0);
    (2.0 * Normal::standard().cdf(z)).min(1.0)
}

/// Paired two-sided signed-rank test on `a - b`. The null distribution is
/// exact for up to [`EXACT_MAX_N`] non-zero differences and a
/// tie-corrected normal approximation with continuity correction beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(a, b, alpha, None)
}

/// As [`wilcoxon_signed_rank`] with the method forced when `method` is set.
pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    alpha: f64,
    method: Option<WilcoxonMethod>,
) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(invalid!("need at least 2 pairs, got {}", a.len()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid!("alpha must lie in (0, 1), got {alpha}"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(invalid!("paired values must be finite"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&d| d != 0.0).collect();
    let n_eff = d.len();
    if n_eff == 0 {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks2, ties) = doubled_ranks(&abs);
    let wp2: u64 = ranks2.iter().zip(&d).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let wm2 = total2 - wp2;
    let w2 = wp2.min(wm2);
    let method = method.unwrap_or(if n_eff <= EXACT_MAX_N {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApproximation
    });
    let p = match method {
        WilcoxonMethod::Exact => {
            if n_eff > EXACT_LIMIT {
                return Err(invalid!("exact test limited to {EXACT_LIMIT} pairs, got {n_eff}"));
            }
            (2.0 * exact_lower_tail(&ranks2, w2)).min(1.0)
        }
        WilcoxonMethod::NormalApproximation => normal_p(n_eff, w2 as f64 / 2.0, &ties),
    };
    Ok(WilcoxonResult {
        n: a.len(),
        n_effective: n_eff,
        zeros_dropped: a.len() - n_eff,
        zero_method: "wilcox".into(),
        w_plus: wp2 as f64 / 2.0,
        w_minus: wm2 as f64 / 2.0,
        statistic: w2 as f64 / 2.0,
        p_value: p,
        method,
        alpha,
        reject: p < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Two-sided p by walking all 2^n sign patterns of the observed ranks.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
        let n = d.len();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        // average ranks by direct counting
        let ranks: Vec<f64> = abs
            .iter()
            .map(|&v| {
                let less = abs.iter().filter(|&&u| u < v).count() as f64;
                let equal = abs.iter().filter(|&&u| u == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let wp: f64 = ranks.iter().zip(&d).filter(|(_, &v)| v > 0.0).map(|(r, _)| r).sum();
        let w = wp.min(total - wp);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s <= w + 1e-9 {
                hits += 1;
            }
        }
        (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn six_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6], 0.001).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(r.p_value, 0.03125);
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert!(!r.reject);
        // one-sided tail P(W+ <= 0) = 1/64
        assert_eq!(exact_lower_tail(&[2, 4, 6, 8, 10, 12], 0), 1.0 / 64.0);
    }

    #[test]
    fn twenty_wins_reject() {
        let a: Vec<f64> = (0..20).map(|i| 0.9 + i as f64 * 0.001).collect();
        let b: Vec<f64> = (0..20).map(|i| 0.5 + i as f64 * 0.002).collect();
        let r = wilcoxon_signed_rank(&a, &b, 0.001).unwrap();
        assert_eq!(r.p_value, 2.0 * 0.5f64.powi(20));
        assert!(r.reject);
    }

    #[test]
    fn zeros_are_dropped() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 0.5], &[1.0, 1.0, 1.0, 1.0], 0.05).unwrap();
        assert_eq!((r.n, r.n_effective, r.zeros_dropped), (4, 3, 1));
        // |d| = 1, 2, 0.5 -> ranks 2, 3, 1; W- = 1
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn degenerate_and_invalid() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0], 0.001), Err(Error::Degenerate(_))));
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0], 0.001).is_err());
        assert!(wilcoxon_signed_rank(&[1.0], &[0.0], 0.001).is_err());
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn normal_approximation_tracks_exact_at_twelve() {
        let mut rng = stream_rng(12, 0);
        for _ in 0..20 {
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
            let e = wilcoxon_signed_rank_with(&a, &b, 0.05, Some(WilcoxonMethod::Exact)).unwrap();
            let n = wilcoxon_signed_rank_with(&a, &b, 0.05, Some(WilcoxonMethod::NormalApproximation)).unwrap();
            assert!((e.p_value - n.p_value).abs() < 0.02, "{} vs {}", e.p_value, n.p_value);
        }
    }

    #[test]
    fn large_samples_use_the_approximation() {
        let a: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 + if i % 3 == 0 { 0.5 } else { -0.25 }).collect();
        let r = wilcoxon_signed_rank(&a, &b, 0.001).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApproximation);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=12).prop_flat_map(|n| {
            let v = proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(-1.0), Just(2.0), -3.0f64..3.0], n);
            (v.clone(), v)
        })
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration((a, b) in paired()) {
            match wilcoxon_signed_rank(&a, &b, 0.05) {
                Ok(r) => {
                    let oracle = enumerate_p(&a, &b);
                    prop_assert!((r.p_value - oracle).abs() < 1e-12, "{} vs {}", r.p_value, oracle);
                    let n = r.n_effective as f64;
                    prop_assert!(r.statistic >= 0.0 && r.statistic <= n * (n + 1.0) / 2.0);
                    prop_assert!((r.w_plus + r.w_minus - n * (n + 1.0) / 2.0).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&r.p_value));
                }
                Err(e) => prop_assert!(matches!(e, Error::Degenerate(_))),
            }
        }
    }
}
