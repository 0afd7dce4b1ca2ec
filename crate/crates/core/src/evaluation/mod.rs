//! Overlap scores, distribution summaries, the paired signed-rank test and
//! particle morphometrics.

mod dice;
mod morphometrics;
mod wilcoxon;

use serde::{Deserialize, Serialize};

pub use dice::{confusion, dice_coefficient, quantile_sorted, summarize, tile_dices, Confusion, DiceSummary};
pub use morphometrics::{
    equivalent_circle_diameter, morphometrics, HistogramBin, Morphometrics, MorphometricsOptions, Particle,
};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult, EXACT_MAX_N};

use crate::error::{Error, Result};

/// Significance level used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.001;

/// Side-by-side comparison of two methods scored on the same tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: DiceSummary,
    pub b: DiceSummary,
    /// Absent when the test is undefined; see `test_error`.
    pub test: Option<WilcoxonResult>,
    pub test_error: Option<String>,
    pub pairs: Vec<(f64, f64)>,
}

impl Comparison {
    /// Paired table `tile,a,b,difference`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tile,a,b,difference\n");
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            s.push_str(&format!("{i},{a},{b},{}\n", a - b));
        }
        s
    }
}

/// Summaries of both lists and the signed-rank test of `a` against `b`.
/// A degenerate test (all differences zero) is reported, not raised.
pub fn compare_methods(a: &[f64], b: &[f64], alpha: f64) -> Result<Comparison> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let (test, test_error) = match wilcoxon_signed_rank(a, b, alpha) {
        Ok(r) => (Some(r), None),
        Err(e @ Error::Degenerate(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        a: summarize(a)?,
        b: summarize(b)?,
        test,
        test_error,
        pairs: a.iter().copied().zip(b.iter().copied()).collect(),
    })
}
