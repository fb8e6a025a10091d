//! End-to-end pipelines: data preparation, training, scoring and the
//! comparison table.

use log::info;

use selnet_core::calibration::{self, CalibrationResult};
use selnet_core::data::{synth_classification, Dataset, Targets};
use selnet_core::evaluation::{
    self, accept_mask, metrics_from_losses, sample_losses, sr_confidence, CompareRow, EvalReport,
};
use selnet_core::model::{Outputs, Prediction};
use selnet_core::optim::{train, TrainHistory};
use selnet_core::{SelectiveNet, Task};

use crate::checkpoint::Preprocessing;
use crate::config::{DataSpec, RunConfig};
use crate::dataio::load_csv;
use crate::error::{Error, Result};

/// Standardized train, calibration and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
}

pub fn load_data(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    match &cfg.data {
        DataSpec::Csv { path, schema, .. } => load_csv(path, schema),
        spec @ DataSpec::Synthetic { .. } => Ok(synth_classification(&spec.synth_spec(seed).unwrap())?),
    }
}

fn standardize_targets(cfg: &RunConfig, data: &Dataset) -> bool {
    matches!(data.targets, Targets::Values(_))
        && matches!(
            cfg.data,
            DataSpec::Csv {
                standardize_targets: true,
                ..
            }
        )
}

/// Split, then standardize every split with statistics fitted on train.
pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let raw = load_data(cfg, seed)?;
    let (tr, ca, te) = raw.split(&cfg.split.spec(seed))?;
    let mut train = tr.standardize(None)?;
    if standardize_targets(cfg, &train) {
        train = train.standardize_targets(None)?;
    }
    for w in &train.provenance.warnings {
        log::warn!("{w}");
    }
    let preprocessing = Preprocessing {
        features: train.feature_stats.clone(),
        target: train.target_stats,
    };
    Ok(Prepared {
        calibration: apply_preprocessing(&ca, &preprocessing)?,
        test: apply_preprocessing(&te, &preprocessing)?,
        train,
        preprocessing,
    })
}

/// Apply stored train-split transforms to raw data.
pub fn apply_preprocessing(raw: &Dataset, pre: &Preprocessing) -> Result<Dataset> {
    let mut d = match &pre.features {
        Some(s) => raw.standardize(Some(s))?,
        None => raw.clone(),
    };
    if let (Some(t), Targets::Values(_)) = (&pre.target, &d.targets) {
        d = d.standardize_targets(Some(t))?;
    }
    Ok(d)
}

pub fn train_selective(
    cfg: &RunConfig,
    prep: &Prepared,
    coverage: f64,
    seed: u64,
) -> Result<(SelectiveNet, TrainHistory)> {
    let task = prep.train.task();
    let arch = cfg.model.architecture(prep.train.width(), task, None);
    let mut model = SelectiveNet::build(&arch, seed)?;
    let tc = cfg.train_config(seed, coverage, task);
    let history = train(&mut model, &prep.train.features, prep.train.labels(), &tc)?;
    Ok((model, history))
}

/// Plain network (no selection or auxiliary head); trained with body dropout
/// when MC-dropout is requested.
pub fn train_baseline(cfg: &RunConfig, prep: &Prepared, seed: u64) -> Result<(SelectiveNet, TrainHistory)> {
    let task = prep.train.task();
    let dropout = cfg.baselines.mc_passes.map(|_| cfg.baselines.mc_rate);
    let arch = cfg.model.architecture(prep.train.width(), task, dropout);
    let mut model = SelectiveNet::baseline(&arch, seed)?;
    let tc = cfg.train_config(seed, 1.0, task);
    let history = train(&mut model, &prep.train.features, prep.train.labels(), &tc)?;
    Ok((model, history))
}

/// Model outputs with point predictions and per-sample losses in original
/// target units.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub outputs: Outputs,
    pub predictions: Vec<Prediction>,
    pub losses: Vec<f64>,
    /// Risks are reported in percent (classification) rather than MSE.
    pub percent: bool,
}

pub fn score(model: &SelectiveNet, data: &Dataset) -> Result<Scored> {
    let outputs = model.infer(&data.features)?;
    let mut predictions = model.point_predictions(&outputs.f);
    if let Some(t) = &data.target_stats {
        for p in &mut predictions {
            if let Prediction::Value(v) = p {
                *v = t.invert(*v);
            }
        }
    }
    let raw = data.raw_targets();
    let losses = sample_losses(&predictions, raw.as_labels())?;
    Ok(Scored {
        outputs,
        predictions,
        losses,
        percent: matches!(data.task(), Task::Classification { .. }),
    })
}

/// Selective test report under threshold `tau` on `g`.
pub fn evaluate_g(scored: &Scored, tau: f64) -> Result<EvalReport> {
    let g = selection(scored)?;
    Ok(metrics_from_losses(
        &scored.losses,
        &accept_mask(g, tau),
        scored.percent,
    )?)
}

pub fn selection(scored: &Scored) -> Result<&[f64]> {
    scored
        .outputs
        .g
        .as_deref()
        .ok_or_else(|| Error::Config("model has no selection head".into()))
}

/// Which confidence score drives a risk–coverage curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    G,
    Sr,
    McDropout { passes: usize },
}

pub fn confidence(
    model: &SelectiveNet,
    data: &Dataset,
    scored: &Scored,
    kind: ScoreKind,
    rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(match kind {
        ScoreKind::G => selection(scored)?.to_vec(),
        ScoreKind::Sr => {
            if !matches!(model.task(), Task::Classification { .. }) {
                return Err(Error::Config("softmax response needs a classification model".into()));
            }
            sr_confidence(&scored.outputs.f).values
        }
        ScoreKind::McDropout { passes } => {
            evaluation::mc_dropout_confidence(model, &data.features, passes, rate, seed)?.values
        }
    })
}

/// Risks per coverage for one seed: SelectiveNet, MC-dropout and SR.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub selnet: Vec<f64>,
    pub calibrations: Vec<CalibrationResult>,
    pub mc_dropout: Option<Vec<f64>>,
    pub sr: Option<Vec<f64>>,
}

fn threshold_for(scores: &[f64], c: f64) -> Result<f64> {
    Ok(if c == 1.0 {
        f64::NEG_INFINITY
    } else {
        evaluation::threshold_for_coverage(scores, c)?
    })
}

fn baseline_risks(cal: &[f64], test: &[f64], scored: &Scored, coverages: &[f64]) -> Result<Vec<f64>> {
    coverages
        .iter()
        .map(|&c| {
            let t = threshold_for(cal, c)?;
            Ok(metrics_from_losses(&scored.losses, &accept_mask(test, t), scored.percent)?.risk)
        })
        .collect()
}

pub fn run_seed(cfg: &RunConfig, coverages: &[f64], seed: u64) -> Result<SeedResult> {
    let prep = prepare(cfg, seed)?;
    let mut selnet = Vec::with_capacity(coverages.len());
    let mut calibrations = Vec::with_capacity(coverages.len());
    for &c in coverages {
        let (model, _) = train_selective(cfg, &prep, c, seed)?;
        let cal = calibration::calibrate(&model, &prep.calibration.features, c, cfg.calibration.delta)?;
        let tau = if c == 1.0 { f64::NEG_INFINITY } else { cal.threshold };
        let report = evaluate_g(&score(&model, &prep.test)?, tau)?;
        info!(
            "seed {seed} c={c}: coverage {:.4} risk {:.4}",
            report.coverage, report.risk
        );
        selnet.push(report.risk);
        calibrations.push(cal);
    }

    let (base, _) = train_baseline(cfg, &prep, seed)?;
    let base_test = score(&base, &prep.test)?;
    let base_cal = score(&base, &prep.calibration)?;
    let sr = if matches!(prep.train.task(), Task::Classification { .. }) {
        let c = confidence(&base, &prep.calibration, &base_cal, ScoreKind::Sr, 0.0, seed)?;
        let t = confidence(&base, &prep.test, &base_test, ScoreKind::Sr, 0.0, seed)?;
        Some(baseline_risks(&c, &t, &base_test, coverages)?)
    } else {
        None
    };
    let mc_dropout = match cfg.baselines.mc_passes {
        Some(passes) => {
            let kind = ScoreKind::McDropout { passes };
            let rate = cfg.baselines.mc_rate;
            let c = confidence(&base, &prep.calibration, &base_cal, kind, rate, seed)?;
            let t = confidence(&base, &prep.test, &base_test, kind, rate, seed.wrapping_add(1))?;
            Some(baseline_risks(&c, &t, &base_test, coverages)?)
        }
        None => None,
    };
    Ok(SeedResult {
        seed,
        selnet,
        calibrations,
        mc_dropout,
        sr,
    })
}

/// Per-coverage rows aggregated over seeds.
pub fn compare(cfg: &RunConfig, coverages: &[f64], seeds: &[u64]) -> Result<(Vec<CompareRow>, Vec<SeedResult>)> {
    let results = seeds
        .iter()
        .map(|&s| run_seed(cfg, coverages, s))
        .collect::<Result<Vec<_>>>()?;
    let by_cov = |f: &dyn Fn(&SeedResult) -> Option<&Vec<f64>>| -> Option<Vec<Vec<f64>>> {
        (0..coverages.len())
            .map(|i| results.iter().map(|r| f(r).map(|v| v[i])).collect::<Option<Vec<f64>>>())
            .collect()
    };
    let sel = by_cov(&|r| Some(&r.selnet)).unwrap();
    let mc = by_cov(&|r| r.mc_dropout.as_ref());
    let sr = by_cov(&|r| r.sr.as_ref());
    let rows = evaluation::compare_report(coverages, &sel, mc.as_deref(), sr.as_deref())?;
    Ok((rows, results))
}
