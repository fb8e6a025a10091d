//! The three-headed selective network and its single-headed baseline.
//!
//! A shared body of dense hidden layers feeds a prediction head `f`, a
//! selection head `g` ending in one sigmoid unit, and an auxiliary head `h`
//! that mirrors `f` and is only used during training. The baseline model is
//! the same body with `f` alone.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::layers::{BatchNorm, BatchStats, Binding, Dense, Dropout, Init, Parameters};
use crate::rng::{self, Rng, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use crate::layers::Mode;

/// Threshold on `g(x)` used when no calibrated threshold is attached.
pub const DEFAULT_SELECTION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    /// Width of the `f` and `h` output layers.
    pub fn output_width(&self) -> usize {
        match self {
            Task::Classification { classes } => *classes,
            Task::Regression => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Dropout applied after the activation, when requested.
    #[serde(default)]
    pub dropout: Option<f64>,
}

impl HiddenSpec {
    pub fn relu_bn(width: usize) -> Self {
        Self {
            width,
            activation: Activation::Relu,
            batch_norm: true,
            dropout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_width: usize,
    pub body: Vec<HiddenSpec>,
    pub task: Task,
    /// Width of the selection head's hidden layer.
    pub selection_hidden: usize,
    #[serde(default = "yes")]
    pub selection_batch_norm: bool,
    #[serde(default = "yes")]
    pub auxiliary: bool,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
}

fn yes() -> bool {
    true
}
fn default_momentum() -> f64 {
    0.9
}
fn default_eps() -> f64 {
    1e-5
}

impl ArchitectureConfig {
    /// Tabular regression: one 64-unit ReLU hidden layer with batch norm,
    /// linear `f`/`h`, and a 16-unit hidden layer in `g`.
    pub fn regression(input_width: usize) -> Self {
        Self {
            input_width,
            body: alloc::vec![HiddenSpec::relu_bn(64)],
            task: Task::Regression,
            selection_hidden: 16,
            selection_batch_norm: true,
            auxiliary: true,
            bn_momentum: default_momentum(),
            bn_eps: default_eps(),
        }
    }

    pub fn classification(input_width: usize, classes: usize, widths: &[usize]) -> Self {
        Self {
            input_width,
            body: widths.iter().map(|&w| HiddenSpec::relu_bn(w)).collect(),
            task: Task::Classification { classes },
            selection_hidden: 16,
            selection_batch_norm: true,
            auxiliary: true,
            bn_momentum: default_momentum(),
            bn_eps: default_eps(),
        }
    }

    /// Set the same dropout rate on every body layer.
    pub fn with_body_dropout(mut self, rate: Option<f64>) -> Self {
        for l in &mut self.body {
            l.dropout = rate;
        }
        self
    }

    pub fn has_batch_norm(&self) -> bool {
        self.body.iter().any(|l| l.batch_norm) || self.selection_batch_norm
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            bail!(Config, "input width must be positive");
        }
        if self.body.is_empty() {
            bail!(Config, "the main body needs at least one hidden layer");
        }
        for (i, l) in self.body.iter().enumerate() {
            if l.width == 0 {
                bail!(Config, "body layer {i} has zero width");
            }
            if let Some(p) = l.dropout {
                Dropout::new(p)?;
            }
        }
        if self.selection_hidden == 0 {
            bail!(Config, "selection head hidden width must be positive");
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                bail!(Config, "classification needs at least 2 classes, got {classes}");
            }
        }
        Ok(())
    }

    pub fn representation_width(&self) -> usize {
        self.body.last().map_or(self.input_width, |l| l.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct HiddenLayer {
    dense: Dense,
    norm: Option<BatchNorm>,
    activation: Activation,
    dropout: Option<Dropout>,
}

#[derive(Clone, Debug, PartialEq)]
struct SelectionHead {
    hidden: Dense,
    norm: Option<BatchNorm>,
    out: Dense,
}

/// Tape variables produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// Class probabilities `[batch × k]` or regression outputs `[batch]`.
    pub f: Var,
    /// Selection values in `[0, 1]`, shape `[batch]`.
    pub g: Option<Var>,
    pub h: Option<Var>,
}

/// Concrete outputs of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    pub f: Tensor,
    pub g: Option<Vec<f64>>,
    pub h: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    Predict(Prediction),
    Abstain,
}

impl Decision {
    pub fn is_abstain(&self) -> bool {
        matches!(self, Decision::Abstain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormSlot {
    Body(usize),
    Selection,
}

/// The selective network `(f, g)` with auxiliary head `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveNet {
    config: ArchitectureConfig,
    params: Parameters,
    body: Vec<HiddenLayer>,
    predictor: Dense,
    selector: Option<SelectionHead>,
    auxiliary: Option<Dense>,
    trained_coverage: Option<f64>,
    calibrated_threshold: Option<f64>,
}

impl SelectiveNet {
    /// Full model with `f`, `g` and (when configured) `h`.
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        Self::construct(config, seed, true)
    }

    /// Same body and `f` as [`SelectiveNet::build`] with the same seed, no `g` or `h`.
    pub fn baseline(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let mut cfg = config.clone();
        cfg.auxiliary = false;
        Self::construct(&cfg, seed, false)
    }

    fn construct(config: &ArchitectureConfig, seed: u64, selective: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut params = Parameters::new();
        let mut body = Vec::with_capacity(config.body.len());
        let mut width = config.input_width;
        for (i, spec) in config.body.iter().enumerate() {
            let init = match spec.activation {
                Activation::Relu => Init::HeUniform,
                Activation::Identity => Init::GlorotUniform,
            };
            let dense = Dense::new(
                &mut params,
                &alloc::format!("body.{i}"),
                width,
                spec.width,
                init,
                &mut rng,
            )?;
            let norm = if spec.batch_norm {
                Some(BatchNorm::new(
                    &mut params,
                    &alloc::format!("body.{i}.bn"),
                    spec.width,
                    config.bn_momentum,
                    config.bn_eps,
                )?)
            } else {
                None
            };
            let dropout = spec.dropout.map(Dropout::new).transpose()?;
            body.push(HiddenLayer {
                dense,
                norm,
                activation: spec.activation,
                dropout,
            });
            width = spec.width;
        }
        let out = config.task.output_width();
        let predictor = Dense::new(&mut params, "f", width, out, Init::GlorotUniform, &mut rng)?;
        let (selector, auxiliary) = if selective {
            let hidden = Dense::new(
                &mut params,
                "g.hidden",
                width,
                config.selection_hidden,
                Init::HeUniform,
                &mut rng,
            )?;
            let norm = if config.selection_batch_norm {
                Some(BatchNorm::new(
                    &mut params,
                    "g.bn",
                    config.selection_hidden,
                    config.bn_momentum,
                    config.bn_eps,
                )?)
            } else {
                None
            };
            let g_out = Dense::new(
                &mut params,
                "g.out",
                config.selection_hidden,
                1,
                Init::GlorotUniform,
                &mut rng,
            )?;
            let selector = SelectionHead {
                hidden,
                norm,
                out: g_out,
            };
            // h is declared last so that it can be stripped by truncation.
            let aux = if config.auxiliary {
                Some(Dense::new(&mut params, "h", width, out, Init::GlorotUniform, &mut rng)?)
            } else {
                None
            };
            (Some(selector), aux)
        } else {
            (None, None)
        };
        Ok(Self {
            config: config.clone(),
            params,
            body,
            predictor,
            selector,
            auxiliary,
            trained_coverage: None,
            calibrated_threshold: None,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn is_selective(&self) -> bool {
        self.selector.is_some()
    }

    pub fn has_auxiliary(&self) -> bool {
        self.auxiliary.is_some()
    }

    pub fn trained_coverage(&self) -> Option<f64> {
        self.trained_coverage
    }

    pub fn set_trained_coverage(&mut self, c: Option<f64>) {
        self.trained_coverage = c;
    }

    pub fn calibrated_threshold(&self) -> Option<f64> {
        self.calibrated_threshold
    }

    pub fn set_calibrated_threshold(&mut self, tau: Option<f64>) {
        self.calibrated_threshold = tau;
    }

    /// Calibrated `τ` when attached, otherwise 0.5.
    pub fn decision_threshold(&self) -> f64 {
        self.calibrated_threshold.unwrap_or(DEFAULT_SELECTION_THRESHOLD)
    }

    /// Scalar parameter counts of the `g` and `h` heads.
    pub fn head_param_counts(&self) -> (usize, usize) {
        let g = self.selector.as_ref().map_or(0, |s| {
            s.hidden.param_count() + s.out.param_count() + s.norm.as_ref().map_or(0, |n| 2 * n.features())
        });
        let h = self.auxiliary.as_ref().map_or(0, Dense::param_count);
        (g, h)
    }

    /// Batch-norm layers in declaration order.
    pub fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut v: Vec<&BatchNorm> = self.body.iter().filter_map(|l| l.norm.as_ref()).collect();
        if let Some(n) = self.selector.as_ref().and_then(|s| s.norm.as_ref()) {
            v.push(n);
        }
        v
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v: Vec<&mut BatchNorm> = self.body.iter_mut().filter_map(|l| l.norm.as_mut()).collect();
        if let Some(n) = self.selector.as_mut().and_then(|s| s.norm.as_mut()) {
            v.push(n);
        }
        v
    }

    pub fn has_dropout(&self) -> bool {
        self.body.iter().any(|l| l.dropout.is_some())
    }

    /// Copy with every dropout layer set to `rate`.
    pub fn with_dropout_rate(&self, rate: f64) -> Result<Self> {
        if !self.has_dropout() {
            bail!(Config, "model has no dropout layers");
        }
        let d = Dropout::new(rate)?;
        let mut m = self.clone();
        for (l, spec) in m.body.iter_mut().zip(m.config.body.iter_mut()) {
            if l.dropout.is_some() {
                l.dropout = Some(d);
                spec.dropout = Some(rate);
            }
        }
        Ok(m)
    }

    /// Inference copy without the auxiliary head.
    pub fn without_auxiliary(&self) -> Self {
        let mut m = self.clone();
        if let Some(h) = m.auxiliary.take() {
            debug_assert_eq!(h.bias.0 + 1, m.params.len());
            let mut kept = Parameters::new();
            for i in 0..h.weight.0 {
                let id = crate::layers::ParamId(i);
                kept.push(m.params.name(id), m.params.get(id).clone());
            }
            m.params = kept;
            m.config.auxiliary = false;
        }
        m
    }

    /// Forward pass. Train mode updates batch-norm running statistics.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<HeadVars> {
        let mut stats = Vec::new();
        let out = self.run(tape, binding, x, mode, rng, &mut stats)?;
        for (slot, s) in stats {
            let norm = match slot {
                NormSlot::Body(i) => self.body[i].norm.as_mut(),
                NormSlot::Selection => self.selector.as_mut().and_then(|s| s.norm.as_mut()),
            };
            if let Some(n) = norm {
                n.update_running(&s);
            }
        }
        Ok(out)
    }

    /// Forward pass that leaves the model untouched (eval or MC-dropout).
    pub fn forward_frozen(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: Var,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<HeadVars> {
        if mode == Mode::Train {
            bail!(Contract, "train-mode forward must go through SelectiveNet::forward");
        }
        self.run(tape, binding, x, mode, rng, &mut Vec::new())
    }

    fn run(
        &self,
        tape: &mut Tape,
        b: &Binding,
        x: Var,
        mode: Mode,
        mut rng: Option<&mut Rng>,
        stats: &mut Vec<(NormSlot, BatchStats)>,
    ) -> Result<HeadVars> {
        let xs = tape.value(x).shape();
        if xs.len() != 2 || xs[1] != self.config.input_width {
            return Err(Error::Dimension {
                op: "selectivenet input",
                left: xs.to_vec(),
                right: alloc::vec![self.config.input_width],
            });
        }
        let rows = xs[0];
        let mut z = x;
        for (i, layer) in self.body.iter().enumerate() {
            z = layer.dense.forward(tape, b, z)?;
            if let Some(n) = &layer.norm {
                let (y, s) = n.forward(tape, b, z, mode)?;
                z = y;
                if let Some(s) = s {
                    stats.push((NormSlot::Body(i), s));
                }
            }
            if layer.activation == Activation::Relu {
                z = tape.relu(z)?;
            }
            if let Some(d) = &layer.dropout {
                z = d.forward(tape, z, mode, rng.as_deref_mut())?;
            }
        }
        let f = self.task_head(tape, b, &self.predictor, z, rows)?;
        let g = match &self.selector {
            Some(s) => {
                let mut a = s.hidden.forward(tape, b, z)?;
                if let Some(n) = &s.norm {
                    let (y, st) = n.forward(tape, b, a, mode)?;
                    a = y;
                    if let Some(st) = st {
                        stats.push((NormSlot::Selection, st));
                    }
                }
                a = tape.relu(a)?;
                let logit = s.out.forward(tape, b, a)?;
                let p = tape.sigmoid(logit)?;
                Some(tape.reshape(p, &[rows])?)
            }
            None => None,
        };
        let h = match &self.auxiliary {
            Some(d) => Some(self.task_head(tape, b, d, z, rows)?),
            None => None,
        };
        Ok(HeadVars { f, g, h })
    }

    fn task_head(&self, tape: &mut Tape, b: &Binding, head: &Dense, z: Var, rows: usize) -> Result<Var> {
        let o = head.forward(tape, b, z)?;
        match self.config.task {
            Task::Classification { .. } => tape.softmax(o),
            Task::Regression => tape.reshape(o, &[rows]),
        }
    }

    /// Eval-mode outputs for a `[batch × input_width]` matrix.
    pub fn infer(&self, x: &Tensor) -> Result<Outputs> {
        let mut tape = Tape::new();
        let b = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let hv = self.forward_frozen(&mut tape, &b, xv, Mode::Eval, None)?;
        Ok(Outputs {
            f: tape.value(hv.f).clone(),
            g: hv.g.map(|g| tape.value(g).data().to_vec()),
            h: hv.h.map(|h| tape.value(h).clone()),
        })
    }

    /// Point predictions from `f` (argmax class or regression value).
    pub fn point_predictions(&self, f: &Tensor) -> Vec<Prediction> {
        match self.config.task {
            Task::Classification { .. } => (0..f.rows()).map(|i| Prediction::Class(argmax(f.row(i)))).collect(),
            Task::Regression => f.data().iter().map(|&v| Prediction::Value(v)).collect(),
        }
    }

    /// Predict `f(x)` where `g(x) ≥` [`SelectiveNet::decision_threshold`], abstain elsewhere.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Decision>> {
        self.predict_with_threshold(x, self.decision_threshold())
    }

    pub fn predict_with_threshold(&self, x: &Tensor, threshold: f64) -> Result<Vec<Decision>> {
        let out = self.infer(x)?;
        let Some(g) = out.g else {
            bail!(Contract, "baseline model has no selection head");
        };
        Ok(self
            .point_predictions(&out.f)
            .into_iter()
            .zip(g)
            .map(|(p, gv)| decide(p, gv, threshold))
            .collect())
    }
}

/// The selection rule: predict iff `g ≥ threshold`.
pub fn decide(prediction: Prediction, g: f64, threshold: f64) -> Decision {
    if g >= threshold {
        Decision::Predict(prediction)
    } else {
        Decision::Abstain
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| r.random_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn regression_default_layout() {
        let cfg = ArchitectureConfig::regression(8);
        let m = SelectiveNet::build(&cfg, 1).unwrap();
        let p = m.parameters();
        assert_eq!(p.get(crate::layers::ParamId(0)).shape(), &[8, 64]);
        assert_eq!(p.get(crate::layers::ParamId(1)).shape(), &[64]);
        assert_eq!(p.tensors()[0].len() + p.tensors()[1].len(), 8 * 64 + 64);
        let (g, h) = m.head_param_counts();
        assert_eq!(g, 64 * 16 + 16 + 2 * 16 + 16 + 1);
        assert_eq!(h, 65);
        // body (dense + bn) + f + g + h
        assert_eq!(p.count(), (8 * 64 + 64 + 128) + 65 + g + h);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ArchitectureConfig::regression(8);
        let a = SelectiveNet::build(&cfg, 9).unwrap();
        let b = SelectiveNet::build(&cfg, 9).unwrap();
        for (x, y) in a.parameters().tensors().iter().zip(b.parameters().tensors()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_ne!(SelectiveNet::build(&cfg, 10).unwrap().parameters(), a.parameters());
    }

    #[test]
    fn classification_heads_are_distributions() {
        let cfg = ArchitectureConfig::classification(5, 3, &[12]);
        let m = SelectiveNet::build(&cfg, 3).unwrap();
        let out = m.infer(&random_input(7, 5, 1)).unwrap();
        for t in [&out.f, out.h.as_ref().unwrap()] {
            for i in 0..7 {
                let s: f64 = t.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(out.g.unwrap().iter().all(|&g| (0.0..=1.0).contains(&g)));
    }

    #[test]
    fn zero_width_is_config_error() {
        let mut cfg = ArchitectureConfig::regression(8);
        cfg.body[0].width = 0;
        assert!(matches!(SelectiveNet::build(&cfg, 0), Err(Error::Config(_))));
        let cfg = ArchitectureConfig::classification(4, 1, &[8]);
        assert!(matches!(SelectiveNet::build(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn input_width_mismatch() {
        let m = SelectiveNet::build(&ArchitectureConfig::regression(8), 0).unwrap();
        assert!(matches!(m.infer(&Tensor::zeros(&[3, 7])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = SelectiveNet::build(&ArchitectureConfig::regression(8), 4).unwrap();
        let x = random_input(10, 8, 2);
        assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
    }

    #[test]
    fn g_head_parameters_do_not_affect_f() {
        let mut m = SelectiveNet::build(&ArchitectureConfig::regression(8), 4).unwrap();
        let x = random_input(10, 8, 2);
        let before = m.infer(&x).unwrap();
        let names: Vec<_> = m.parameters().names().to_vec();
        for (i, n) in names.iter().enumerate() {
            if n.starts_with("g.") {
                let t = &mut m.parameters_mut().tensors_mut()[i];
                t.data_mut().iter_mut().for_each(|v| *v += 0.37);
            }
        }
        let after = m.infer(&x).unwrap();
        assert_eq!(before.f, after.f);
        assert_eq!(before.h, after.h);
        assert_ne!(before.g, after.g);
    }

    #[test]
    fn threshold_boundaries() {
        let p = Prediction::Value(1.0);
        assert_eq!(decide(p, 0.5, 0.5), Decision::Predict(p));
        assert_eq!(decide(p, 0.49, 0.5), Decision::Abstain);
        assert_eq!(decide(p, 1.0, 0.5), Decision::Predict(p));
    }

    #[test]
    fn predict_agrees_with_thresholded_g() {
        let m = SelectiveNet::build(&ArchitectureConfig::classification(4, 3, &[16]), 8).unwrap();
        let x = random_input(50, 4, 5);
        let g = m.infer(&x).unwrap().g.unwrap();
        let d = m.predict(&x).unwrap();
        for (gv, dv) in g.iter().zip(d) {
            assert_eq!(*gv < 0.5, dv.is_abstain());
        }
    }

    #[test]
    fn baseline_shares_body_and_f() {
        let cfg = ArchitectureConfig::regression(8);
        let full = SelectiveNet::build(&cfg, 21).unwrap();
        let base = SelectiveNet::baseline(&cfg, 21).unwrap();
        let (g, h) = full.head_param_counts();
        assert_eq!(base.parameters().count(), full.parameters().count() - g - h);
        let n = base.parameters().len();
        assert_eq!(&full.parameters().tensors()[..n], base.parameters().tensors());
        let out = base.infer(&random_input(3, 8, 0)).unwrap();
        assert!(out.g.is_none() && out.h.is_none());
        assert_eq!(out.f.shape(), &[3]);
    }

    #[test]
    fn stripping_auxiliary_keeps_f_and_g() {
        let m = SelectiveNet::build(&ArchitectureConfig::regression(8), 2).unwrap();
        let s = m.without_auxiliary();
        let x = random_input(5, 8, 3);
        let (a, b) = (m.infer(&x).unwrap(), s.infer(&x).unwrap());
        assert_eq!(a.f, b.f);
        assert_eq!(a.g, b.g);
        assert!(b.h.is_none());
        assert_eq!(s.parameters().count(), m.parameters().count() - m.head_param_counts().1);
    }

    #[test]
    fn dropout_rate_override_requires_dropout_layers() {
        let cfg = ArchitectureConfig::regression(8);
        let m = SelectiveNet::baseline(&cfg, 0).unwrap();
        assert!(matches!(m.with_dropout_rate(0.1), Err(Error::Config(_))));
        let m = SelectiveNet::baseline(&cfg.with_body_dropout(Some(0.05)), 0).unwrap();
        assert!(m.with_dropout_rate(0.5).is_ok());
    }
}
