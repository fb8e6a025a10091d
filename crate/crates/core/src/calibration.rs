//! Post-training coverage calibration.
//!
//! The threshold is the nearest-rank `100(1 − c)` percentile of validation
//! `g` scores, so validation coverage under the rule `g ≥ τ` is at least `c`.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;
use crate::model::{Decision, SelectiveNet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub target_coverage: f64,
    pub validation_size: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub achieved_coverage: f64,
}

/// Nearest-rank threshold: sort ascending and take the value at 1-based
/// rank `⌊n(1 − c)⌋ + 1`.
pub fn select_threshold(scores: &[f64], coverage: f64) -> Result<f64> {
    if scores.is_empty() {
        bail!(Contract, "threshold selection on an empty set");
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        bail!(Domain, "coverage must lie in (0, 1], got {coverage}");
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Data, "NaN score");
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = rejected_count(n, coverage) + 1;
    Ok(sorted[k.min(n) - 1])
}

/// `⌊n(1 − c)⌋`, snapping products within rounding noise of an integer.
fn rejected_count(n: usize, coverage: f64) -> usize {
    let x = n as f64 * (1.0 - coverage);
    let r = math::round(x);
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        math::floor(x) as usize
    }
}

/// Hoeffding deviation `√(ln(2/δ) / 2n)`.
pub fn hoeffding_epsilon(n: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        bail!(Domain, "sample size must be positive");
    }
    if !(delta > 0.0 && delta < 2.0) {
        bail!(Domain, "delta must lie in (0, 2), got {delta}");
    }
    Ok(math::sqrt(math::ln(2.0 / delta) / (2.0 * n as f64)))
}

/// Fraction of scores with `s ≥ threshold`.
pub fn coverage_at(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Decisions of `(f, g_τ)`.
pub fn calibrated_predict(model: &SelectiveNet, threshold: f64, x: &Tensor) -> Result<Vec<Decision>> {
    model.predict_with_threshold(x, threshold)
}

/// Calibrate from precomputed validation scores.
pub fn calibrate_scores(scores: &[f64], coverage: f64, delta: f64) -> Result<CalibrationResult> {
    let threshold = select_threshold(scores, coverage)?;
    let epsilon = hoeffding_epsilon(scores.len(), delta)?;
    Ok(CalibrationResult {
        threshold,
        target_coverage: coverage,
        validation_size: scores.len(),
        delta,
        epsilon,
        achieved_coverage: coverage_at(scores, threshold),
    })
}

/// Calibrate `model` on unlabeled validation inputs.
pub fn calibrate(model: &SelectiveNet, validation: &Tensor, coverage: f64, delta: f64) -> Result<CalibrationResult> {
    let out = model.infer(validation)?;
    let Some(g) = out.g else {
        bail!(Contract, "baseline model has no selection head to calibrate");
    };
    calibrate_scores(&g, coverage, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;

    fn tenths() -> Vec<f64> {
        (0..10).map(|i| 0.05 + 0.1 * i as f64).collect()
    }

    #[test]
    fn nearest_rank_hand_case() {
        let g = tenths();
        let tau = select_threshold(&g, 0.8).unwrap();
        assert_eq!(tau, g[2]);
        assert!((tau - 0.25).abs() < 1e-15);
        assert_eq!(coverage_at(&g, tau), 0.8);
        assert_eq!(select_threshold(&g, 1.0).unwrap(), g[0]);
        assert_eq!(select_threshold(&g, 0.75).unwrap(), g[2]);
        assert_eq!(select_threshold(&g, 0.85).unwrap(), g[1]);
    }

    #[test]
    fn ties_accept_everything() {
        let g = vec![0.4; 7];
        for c in [0.1, 0.5, 1.0] {
            let t = select_threshold(&g, c).unwrap();
            assert_eq!(t, 0.4);
            assert_eq!(coverage_at(&g, t), 1.0);
        }
    }

    #[test]
    fn empty_and_bad_inputs() {
        assert!(matches!(select_threshold(&[], 0.5), Err(Error::Contract(_))));
        assert!(matches!(hoeffding_epsilon(10, 2.0), Err(Error::Domain(_))));
        assert!(matches!(hoeffding_epsilon(10, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn epsilon_values() {
        // 30-digit evaluations of the closed form
        assert!((hoeffding_epsilon(5000, 0.001).unwrap() - 0.027_569_734_238_004_693).abs() < 1e-15);
        assert!((hoeffding_epsilon(200, 0.05).unwrap() - 0.096_032_279_131_992_08).abs() < 1e-15);
        assert!(hoeffding_epsilon(200, 2.0 - 1e-12).unwrap() < 1e-6);
    }

    #[test]
    fn calibrate_scores_reports_everything() {
        let r = calibrate_scores(&tenths(), 0.8, 0.05).unwrap();
        assert_eq!(r.validation_size, 10);
        assert_eq!(r.achieved_coverage, 0.8);
        assert_eq!(r, calibrate_scores(&tenths(), 0.8, 0.05).unwrap());
    }
}
