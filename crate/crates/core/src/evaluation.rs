//! Selective metrics, confidence-score baselines, risk–coverage curves and
//! the cross-calibration grid.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::calibration::select_threshold;
use crate::error::{bail, Error, Result};
use crate::layers::Binding;
use crate::loss::Labels;
use crate::math;
use crate::model::{argmax, Mode, Prediction, SelectiveNet, Task};
use crate::rng::{self, Stream};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_coverage: Option<f64>,
    pub coverage: f64,
    /// Percent 0/1 error for classification, mean squared error for regression.
    pub risk: f64,
    pub covered: usize,
    pub rejected: usize,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.covered + self.rejected
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    SelectivenetG,
    SoftmaxResponse,
    McDropout,
}

/// Per-sample confidence; larger means more confident.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub values: Vec<f64>,
    pub source: ScoreSource,
}

/// 0/1 error for class predictions, squared error for values.
pub fn sample_losses(predictions: &[Prediction], labels: Labels<'_>) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() {
        bail!(
            Contract,
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        );
    }
    predictions
        .iter()
        .enumerate()
        .map(|(i, p)| match (p, labels) {
            (Prediction::Class(c), Labels::Classes(y)) => Ok(if *c == y[i] { 0.0 } else { 1.0 }),
            (Prediction::Value(v), Labels::Values(y)) => Ok((v - y[i]) * (v - y[i])),
            _ => bail!(Contract, "prediction type does not match labels"),
        })
        .collect()
}

/// Risk and coverage under a hard acceptance mask.
pub fn selective_metrics(predictions: &[Prediction], labels: Labels<'_>, accept: &[bool]) -> Result<EvalReport> {
    let losses = sample_losses(predictions, labels)?;
    let percent = matches!(labels, Labels::Classes(_));
    metrics_from_losses(&losses, accept, percent)
}

/// [`selective_metrics`] on precomputed per-sample losses.
pub fn metrics_from_losses(losses: &[f64], accept: &[bool], percent: bool) -> Result<EvalReport> {
    if losses.len() != accept.len() {
        bail!(Contract, "{} losses but {} mask entries", losses.len(), accept.len());
    }
    let covered = accept.iter().filter(|&&a| a).count();
    if covered == 0 {
        return Err(Error::UndefinedRisk);
    }
    let sum: f64 = losses.iter().zip(accept).filter(|(_, &a)| a).map(|(l, _)| l).sum();
    let risk = sum / covered as f64;
    Ok(EvalReport {
        target_coverage: None,
        coverage: covered as f64 / losses.len() as f64,
        risk: if percent { 100.0 * risk } else { risk },
        covered,
        rejected: losses.len() - covered,
    })
}

pub fn accept_mask(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

/// Accept exactly the `k` highest scores; ties go to the lower index.
pub fn top_k_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; scores.len()];
    for &i in idx.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// Maximum probability per row.
pub fn sr_confidence(probabilities: &Tensor) -> ConfidenceScore {
    let values = (0..probabilities.rows())
        .map(|i| probabilities.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ConfidenceScore {
        values,
        source: ScoreSource::SoftmaxResponse,
    }
}

/// Population variance computed on offsets from the first value, so that
/// identical inputs give exactly zero.
fn variance(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    let n = xs.len() as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for &x in xs {
        let d = x - x0;
        s += d;
        s2 += d * d;
    }
    let v = (s2 - s * s / n) / n;
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Negative variance across `passes` dropout-active forward passes.
///
/// Classification uses the probability of the class with the highest mean
/// probability; regression uses the output itself. Every sample draws its
/// masks from its own generator keyed by `(seed, index)`.
pub fn mc_dropout_confidence(
    model: &SelectiveNet,
    x: &Tensor,
    passes: usize,
    rate: f64,
    seed: u64,
) -> Result<ConfidenceScore> {
    if passes < 2 {
        bail!(Config, "MC-dropout needs at least 2 passes, got {passes}");
    }
    let m = model.with_dropout_rate(rate)?;
    let mut tape = Tape::new();
    let b: Binding = m.parameters().bind_frozen(&mut tape);
    let base = tape.len();
    let mut values = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        tape.truncate(base);
        let rep = x.select_rows(&vec![i; passes]);
        let xv = tape.constant(rep);
        let mut r = rng::keyed(seed, Stream::McDropout, i as u64);
        let heads = m.forward_frozen(&mut tape, &b, xv, Mode::ForcedDropout, Some(&mut r))?;
        let f = tape.value(heads.f);
        let var = match m.task() {
            Task::Classification { classes } => {
                let mut mean = vec![0.0; classes];
                for p in 0..passes {
                    for (a, v) in mean.iter_mut().zip(f.row(p)) {
                        *a += v;
                    }
                }
                let c = argmax(&mean);
                let col: Vec<f64> = (0..passes).map(|p| f.row(p)[c]).collect();
                variance(&col)
            }
            Task::Regression => variance(f.data()),
        };
        values.push(if var == 0.0 { 0.0 } else { -var });
    }
    Ok(ConfidenceScore {
        values,
        source: ScoreSource::McDropout,
    })
}

/// Nearest-rank threshold on any confidence score.
pub fn threshold_for_coverage(scores: &[f64], coverage: f64) -> Result<f64> {
    select_threshold(scores, coverage)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub target_coverage: f64,
    pub threshold: f64,
    pub coverage: f64,
    pub risk: f64,
}

/// Risk–coverage curve. Thresholds are fit on `calibration` scores (or on the
/// test scores when `None`) and applied to the test set. A target of 1
/// accepts every test sample.
pub fn risk_coverage_curve(
    calibration: Option<&[f64]>,
    test_scores: &[f64],
    test_losses: &[f64],
    percent: bool,
    grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    let fit = calibration.unwrap_or(test_scores);
    grid.iter()
        .map(|&c| {
            if !(c > 0.0 && c <= 1.0) {
                bail!(Domain, "coverage grid value {c} outside (0, 1]");
            }
            let threshold = if c == 1.0 {
                f64::NEG_INFINITY
            } else {
                threshold_for_coverage(fit, c)?
            };
            let r = metrics_from_losses(test_losses, &accept_mask(test_scores, threshold), percent)?;
            Ok(CurvePoint {
                target_coverage: c,
                threshold,
                coverage: r.coverage,
                risk: r.risk,
            })
        })
        .collect()
}

/// Scores and losses of one trained model on the calibration and test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredModel {
    pub trained_coverage: f64,
    pub calibration_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
    pub test_losses: Vec<f64>,
}

impl ScoredModel {
    pub fn from_model(model: &SelectiveNet, calibration: &Tensor, test: &Tensor, labels: Labels<'_>) -> Result<Self> {
        let cal = model.infer(calibration)?;
        let out = model.infer(test)?;
        let (Some(cg), Some(tg)) = (cal.g, out.g) else {
            bail!(Contract, "grid entries need a selection head");
        };
        let Some(trained_coverage) = model.trained_coverage() else {
            bail!(Contract, "model has no recorded training coverage");
        };
        Ok(Self {
            trained_coverage,
            calibration_scores: cg,
            test_scores: tg,
            test_losses: sample_losses(&model.point_predictions(&out.f), labels)?,
        })
    }
}

/// Selective test risk of each model (rows) calibrated to each coverage (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub train_coverages: Vec<f64>,
    pub calibration_coverages: Vec<f64>,
    pub risks: Vec<Vec<f64>>,
}

pub fn cross_calibration_grid(models: &[ScoredModel], coverages: &[f64], percent: bool) -> Result<CoverageGrid> {
    if models.is_empty() || coverages.is_empty() {
        bail!(Contract, "grid needs at least one model and one coverage");
    }
    let risks = models
        .iter()
        .map(|m| {
            coverages
                .iter()
                .map(|&c| {
                    let t = threshold_for_coverage(&m.calibration_scores, c)?;
                    Ok(metrics_from_losses(&m.test_losses, &accept_mask(&m.test_scores, t), percent)?.risk)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageGrid {
        train_coverages: models.iter().map(|m| m.trained_coverage).collect(),
        calibration_coverages: coverages.to_vec(),
        risks,
    })
}

/// `100·(baseline − selnet)/baseline`, or `None` when the baseline risk is 0.
pub fn improvement(selnet: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (baseline - selnet) / baseline)
}

/// Mean and standard error of the mean across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        bail!(Contract, "summary of no values");
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let stderr = if n < 2 {
        0.0
    } else {
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        math::sqrt(ss / (n - 1) as f64) / math::sqrt(n as f64)
    };
    Ok(Summary { mean, stderr, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub coverage: f64,
    pub selnet: Summary,
    pub mc_dropout: Option<Summary>,
    pub mc_improvement: Option<f64>,
    pub sr: Option<Summary>,
    pub sr_improvement: Option<f64>,
}

/// Join per-coverage risk lists (one entry per seed) into comparison rows.
pub fn compare_report(
    coverages: &[f64],
    selnet: &[Vec<f64>],
    mc_dropout: Option<&[Vec<f64>]>,
    sr: Option<&[Vec<f64>]>,
) -> Result<Vec<CompareRow>> {
    let check = |name: &str, v: &[Vec<f64>]| -> Result<()> {
        if v.len() != coverages.len() {
            bail!(Contract, "{name}: {} rows for {} coverages", v.len(), coverages.len());
        }
        Ok(())
    };
    check("selectivenet", selnet)?;
    if let Some(m) = mc_dropout {
        check("mc-dropout", m)?;
    }
    if let Some(s) = sr {
        check("softmax response", s)?;
    }
    coverages
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = summarize(&selnet[i])?;
            let mc = mc_dropout.map(|m| summarize(&m[i])).transpose()?;
            let sr = sr.map(|m| summarize(&m[i])).transpose()?;
            Ok(CompareRow {
                coverage: c,
                selnet: s,
                mc_improvement: mc.and_then(|b| improvement(s.mean, b.mean)),
                mc_dropout: mc,
                sr_improvement: sr.and_then(|b| improvement(s.mean, b.mean)),
                sr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_case() {
        let preds: Vec<Prediction> = [1, 0, 1, 0].iter().map(|&c| Prediction::Class(c)).collect();
        let labels = [0, 0, 0, 0];
        let r = selective_metrics(&preds, Labels::Classes(&labels), &[true, true, false, false]).unwrap();
        assert_eq!(r.coverage, 0.5);
        assert_eq!(r.risk, 50.0);
        assert_eq!(r.covered + r.rejected, 4);
        let r = selective_metrics(&preds, Labels::Classes(&labels), &[true; 4]).unwrap();
        assert_eq!(r.risk, 50.0);
        assert_eq!(r.coverage, 1.0);
        let r = selective_metrics(&preds, Labels::Classes(&labels), &[false, true, false, true]).unwrap();
        assert_eq!(r.risk, 0.0);
        assert_eq!(
            selective_metrics(&preds, Labels::Classes(&labels), &[false; 4]),
            Err(Error::UndefinedRisk)
        );
    }

    #[test]
    fn regression_metrics_are_mse() {
        let preds = [Prediction::Value(1.0), Prediction::Value(3.0)];
        let r = selective_metrics(&preds, Labels::Values(&[0.0, 0.0]), &[true, true]).unwrap();
        assert_eq!(r.risk, 5.0);
    }

    #[test]
    fn sr_examples() {
        let p = Tensor::from_rows(&[[0.1; 10]]).unwrap();
        assert_eq!(sr_confidence(&p).values, vec![0.1]);
        let p = Tensor::from_rows(&[[0.7, 0.2, 0.1], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(sr_confidence(&p).values, vec![0.7, 1.0]);
    }

    #[test]
    fn variance_of_identical_values_is_zero() {
        assert_eq!(variance(&[0.1 + 0.2; 100]), 0.0);
        assert!((variance(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn improvement_values() {
        assert!((improvement(4.16, 4.58).unwrap() - 9.1703).abs() < 1e-4);
        assert_eq!(improvement(2.0, 2.0), Some(0.0));
        assert_eq!(improvement(1.0, 0.0), None);
    }

    #[test]
    fn summary_values() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[5.0]).unwrap().stderr, 0.0);
    }

    #[test]
    fn curve_endpoint_and_oracle_scores() {
        let losses = [0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let oracle: Vec<f64> = losses.iter().map(|l| -l).collect();
        let grid = [1.0, 0.5];
        let pts = risk_coverage_curve(None, &oracle, &losses, true, &grid).unwrap();
        assert_eq!(pts[0].risk, 100.0 * 3.0 / 8.0);
        assert_eq!(pts[0].coverage, 1.0);
        assert!(pts[1].risk <= pts[0].risk);
    }

    #[test]
    fn top_k_takes_highest_scores() {
        assert_eq!(top_k_mask(&[0.3, 0.9, 0.3, 0.1], 2), vec![true, true, false, false]);
        assert_eq!(top_k_mask(&[0.3, 0.9], 0), vec![false, false]);
    }

    #[test]
    fn single_cell_grid_matches_direct_report() {
        let m = ScoredModel {
            trained_coverage: 0.8,
            calibration_scores: vec![0.1, 0.5, 0.7, 0.9, 0.3],
            test_scores: vec![0.2, 0.6, 0.8, 0.95, 0.4],
            test_losses: vec![1.0, 0.0, 1.0, 0.0, 0.0],
        };
        let g = cross_calibration_grid(core::slice::from_ref(&m), &[0.6], true).unwrap();
        let t = threshold_for_coverage(&m.calibration_scores, 0.6).unwrap();
        let direct = metrics_from_losses(&m.test_losses, &accept_mask(&m.test_scores, t), true).unwrap();
        assert_eq!(g.risks, vec![vec![direct.risk]]);
    }
}
