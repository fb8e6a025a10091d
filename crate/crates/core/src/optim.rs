//! Update rules and the training loop.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::loss::{graph, Labels, LossConfig};
use crate::math;
use crate::model::{Mode, SelectiveNet, DEFAULT_SELECTION_THRESHOLD};
use crate::rng::{self, Stream};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
        /// Halve the learning rate every this many epochs.
        #[serde(default)]
        halving_period: Option<usize>,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
            weight_decay,
        }
    }

    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64, halving_period: Option<usize>) -> Self {
        OptimizerConfig::Sgd {
            lr,
            momentum,
            weight_decay,
            halving_period,
        }
    }

    pub fn base_lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.base_lr();
        if !(lr > 0.0 && lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {lr}");
        }
        match *self {
            OptimizerConfig::Sgd {
                momentum,
                weight_decay,
                halving_period,
                ..
            } => {
                if !(0.0..1.0).contains(&momentum) {
                    bail!(Config, "momentum must lie in [0, 1), got {momentum}");
                }
                if !(weight_decay >= 0.0) {
                    bail!(Config, "weight decay must be non-negative, got {weight_decay}");
                }
                if halving_period == Some(0) {
                    bail!(Config, "halving period must be positive");
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    bail!(Config, "Adam betas must lie in [0, 1), got {beta1}, {beta2}");
                }
                if !(eps > 0.0) {
                    bail!(Config, "Adam epsilon must be positive, got {eps}");
                }
                if !(weight_decay >= 0.0) {
                    bail!(Config, "weight decay must be non-negative, got {weight_decay}");
                }
            }
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch.
pub fn lr_schedule(epoch: usize, config: &OptimizerConfig) -> f64 {
    match *config {
        OptimizerConfig::Sgd {
            lr,
            halving_period: Some(p),
            ..
        } => lr * math::powi(0.5, (epoch / p) as i32),
        _ => config.base_lr(),
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor], state: &[Vec<f64>]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        bail!(
            Contract,
            "{} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.len()
        );
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state[i].len() != p.len() {
            bail!(
                Contract,
                "parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            );
        }
    }
    Ok(())
}

/// `v ← μv + ∇;  θ ← θ − lr·(v + wd·θ)`
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Vec<f64>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    check_shapes(params, grads, velocity)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((t, &gr), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vel = momentum * *vel + gr;
            *t -= lr * (*vel + weight_decay * *t);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam with coupled weight decay `− lr·wd·θ`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    check_shapes(params, grads, &state.m)?;
    check_shapes(params, grads, &state.v)?;
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - math::powi(beta1, t);
    let c2 = 1.0 - math::powi(beta2, t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (th, &gr)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gr;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gr * gr;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *th -= lr * mh / (math::sqrt(vh) + eps) + lr * weight_decay * *th;
        }
    }
    Ok(())
}

/// Optimizer state bound to one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    velocity: Vec<Vec<f64>>,
    adam: AdamState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            adam: AdamState::new(params),
        })
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        match self.config {
            OptimizerConfig::Sgd {
                momentum, weight_decay, ..
            } => sgd_step(params, grads, &mut self.velocity, lr, momentum, weight_decay),
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => adam_step(params, grads, &mut self.adam, lr, beta1, beta2, eps, weight_decay),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default = "shuffle_default")]
    pub shuffle: bool,
}

fn shuffle_default() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self, model: &SelectiveNet) -> Result<()> {
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if self.batch_size < 2 && model.config().has_batch_norm() {
            bail!(Config, "batch norm needs a batch size of at least 2");
        }
        Ok(())
    }
}

/// Per-epoch training summary; batch values averaged with sample weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub selective_loss: Option<f64>,
    pub auxiliary_loss: Option<f64>,
    pub soft_coverage: Option<f64>,
    pub hard_coverage: Option<f64>,
    pub selective_risk: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mini-batch boundaries; a trailing batch of one sample is folded into the
/// previous batch when `merge_singleton` is set.
pub fn batch_ranges(n: usize, batch_size: usize, merge_singleton: bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if merge_singleton && out.len() >= 2 {
        let (s, e) = out[out.len() - 1];
        if e - s < 2 {
            out.pop();
            out.last_mut().unwrap().1 = e;
        }
    }
    out
}

/// Train `model` in place.
pub fn train(model: &mut SelectiveNet, x: &Tensor, labels: Labels<'_>, config: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, x, labels, config, |_, _, _| Ok(()))
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<F>(
    model: &mut SelectiveNet,
    x: &Tensor,
    labels: Labels<'_>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory>
where
    F: FnMut(usize, &SelectiveNet, &EpochRecord) -> Result<()>,
{
    config.validate(model)?;
    let n = x.rows();
    if n == 0 || x.rank() != 2 {
        bail!(Data, "training set is empty");
    }
    if labels.len() != n {
        bail!(Contract, "{n} inputs but {} labels", labels.len());
    }
    let bn = model.config().has_batch_norm();
    if bn && n < 2 {
        bail!(Data, "batch norm needs at least 2 training samples");
    }
    model.set_trained_coverage(model.is_selective().then_some(config.loss.coverage));

    let mut opt = Optimizer::new(config.optimizer, model.parameters().tensors())?;
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..n).collect();
    let ranges = batch_ranges(n, config.batch_size, bn);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let lr = lr_schedule(epoch, &config.optimizer);
        let mut acc = Accumulator::default();
        for (b, &(s, e)) in ranges.iter().enumerate() {
            let idx = &order[s..e];
            let diverged = |err: Error| match err {
                Error::NonFinite(_) => Error::Diverged { epoch, batch: b },
                other => other,
            };
            let xb = x.select_rows(idx);
            let (cls, vals);
            let lb = match labels {
                Labels::Classes(c) => {
                    cls = idx.iter().map(|&i| c[i]).collect::<Vec<_>>();
                    Labels::Classes(&cls)
                }
                Labels::Values(v) => {
                    vals = idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
                    Labels::Values(&vals)
                }
            };
            let mut tape = Tape::new();
            let binding = model.parameters().bind(&mut tape);
            let xv = tape.constant(xb);
            let heads = model
                .forward(&mut tape, &binding, xv, Mode::Train, Some(&mut dropout_rng))
                .map_err(diverged)?;
            let obj = graph::objective(&mut tape, &heads, lb, &config.loss).map_err(diverged)?;
            let total = tape.item(obj.total)?;
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let grads = tape.backward(obj.total).map_err(diverged)?;
            let grads = binding.collect(&grads, model.parameters());
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            opt.step(model.parameters_mut().tensors_mut(), &grads, lr)?;

            let w = (e - s) as f64;
            acc.add(w, total, &tape, &obj, heads.g);
        }
        let record = acc.finish(epoch, lr);
        on_epoch(epoch, model, &record)?;
        history.epochs.push(record);
    }
    Ok(history)
}

#[derive(Default)]
struct Accumulator {
    weight: f64,
    total: f64,
    selective: f64,
    auxiliary: f64,
    soft: f64,
    hard: f64,
    risk: f64,
    has_sel: bool,
    has_aux: bool,
}

impl Accumulator {
    fn add(&mut self, w: f64, total: f64, tape: &Tape, obj: &graph::Objective, g: Option<crate::Var>) {
        self.weight += w;
        self.total += w * total;
        if let Some(s) = obj.selective {
            self.has_sel = true;
            self.selective += w * tape.value(s.loss).data()[0];
            self.soft += w * tape.value(s.coverage).data()[0];
            self.risk += w * tape.value(s.risk).data()[0];
        }
        if let Some(a) = obj.auxiliary {
            self.has_aux = true;
            self.auxiliary += w * tape.value(a).data()[0];
        }
        if let Some(g) = g {
            let gv = tape.value(g).data();
            self.hard += gv.iter().filter(|&&v| v >= DEFAULT_SELECTION_THRESHOLD).count() as f64;
        }
    }

    fn finish(self, epoch: usize, lr: f64) -> EpochRecord {
        let w = self.weight;
        let sel = |v: f64| self.has_sel.then_some(v / w);
        EpochRecord {
            epoch,
            lr,
            total_loss: self.total / w,
            selective_loss: sel(self.selective),
            auxiliary_loss: self.has_aux.then_some(self.auxiliary / w),
            soft_coverage: sel(self.soft),
            hard_coverage: sel(self.hard),
            selective_risk: sel(self.risk),
        }
    }
}

/// Training objective over the whole set with the model in eval mode.
pub fn full_objective(model: &SelectiveNet, x: &Tensor, labels: Labels<'_>, loss: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let b = model.parameters().bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let heads = model.forward_frozen(&mut tape, &b, xv, Mode::Eval, None)?;
    let obj = graph::objective(&mut tape, &heads, labels, loss)?;
    tape.item(obj.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossKind;
    use crate::model::ArchitectureConfig;
    use rand::Rng as _;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn sgd_hand_cases() {
        let mut p = one(0.0);
        let mut vel = vec![vec![0.0]];
        sgd_step(&mut p, &one(1.0), &mut vel, 0.1, 0.0, 0.0).unwrap();
        assert!((p[0].data()[0] + 0.1).abs() < 1e-15);

        let mut p = one(0.0);
        let mut vel = vec![vec![0.0]];
        sgd_step(&mut p, &one(1.0), &mut vel, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &one(1.0), &mut vel, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0].data()[0] + 0.29).abs() < 1e-15);

        let mut p = one(3.0);
        let mut vel = vec![vec![0.0]];
        sgd_step(&mut p, &one(0.0), &mut vel, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p[0].data()[0], 3.0);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = one(0.0);
        let mut vel = vec![vec![0.0]];
        let g = vec![Tensor::vector(vec![1.0, 2.0])];
        assert!(matches!(
            sgd_step(&mut p, &g, &mut vel, 0.1, 0.0, 0.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn adam_first_step_is_lr() {
        for g in [-7.0, 1e-3, 2.5, 1e4] {
            let mut p = one(0.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &one(g), &mut s, 1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
            assert!((p[0].data()[0].abs() - 1e-3).abs() < 1e-6);
        }
        let mut p = one(2.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &one(0.0), &mut s, 1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        assert_eq!(p[0].data()[0], 2.0);
    }

    #[test]
    fn halving_schedule() {
        let c = OptimizerConfig::sgd(0.1, 0.9, 0.0, Some(25));
        assert_eq!(lr_schedule(0, &c), 0.1);
        assert_eq!(lr_schedule(24, &c), 0.1);
        assert_eq!(lr_schedule(25, &c), 0.05);
        assert!((lr_schedule(75, &c) - 0.0125).abs() < 1e-15);
        let a = OptimizerConfig::adam(5e-4, 1e-4);
        assert_eq!(lr_schedule(700, &a), 5e-4);
    }

    #[test]
    fn batch_merge_rule() {
        assert_eq!(batch_ranges(10, 4, true), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_ranges(9, 4, true), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_ranges(9, 4, false), vec![(0, 4), (4, 8), (8, 9)]);
        assert_eq!(batch_ranges(1, 4, true), vec![(0, 1)]);
        assert_eq!(batch_ranges(618, 256, true), vec![(0, 256), (256, 512), (512, 618)]);
    }

    fn toy_regression(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
        let mut r = rng::seeded(seed);
        let mut x = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: [f64; 3] = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ];
            x.extend_from_slice(&a);
            y.push(a[0] - 2.0 * a[1] * a[2] + r.random_range(-0.1..0.1));
        }
        (Tensor::matrix(n, 3, x).unwrap(), y)
    }

    fn toy_config(seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::adam(5e-3, 1e-4),
            epochs: 30,
            batch_size: 16,
            seed,
            loss: LossConfig::new(0.8, LossKind::Squared),
            shuffle: true,
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (x, y) = toy_regression(101, 3);
        let arch = ArchitectureConfig::regression(3);
        let cfg = toy_config(7);
        let mut a = SelectiveNet::build(&arch, 7).unwrap();
        let before = full_objective(&a, &x, Labels::Values(&y), &cfg.loss).unwrap();
        let ha = train(&mut a, &x, Labels::Values(&y), &cfg).unwrap();
        let mut b = SelectiveNet::build(&arch, 7).unwrap();
        let hb = train(&mut b, &x, Labels::Values(&y), &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.epochs.len(), 30);
        let after = full_objective(&a, &x, Labels::Values(&y), &cfg.loss).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(a.trained_coverage(), Some(0.8));
    }

    #[test]
    fn batch_size_one_with_batch_norm_is_rejected() {
        let (x, y) = toy_regression(10, 1);
        let mut m = SelectiveNet::build(&ArchitectureConfig::regression(3), 0).unwrap();
        let mut cfg = toy_config(0);
        cfg.batch_size = 1;
        assert!(matches!(
            train(&mut m, &x, Labels::Values(&y), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let (x, y) = toy_regression(64, 2);
        let y: Vec<f64> = y.iter().map(|v| v * 1e150).collect();
        let mut m = SelectiveNet::build(&ArchitectureConfig::regression(3), 0).unwrap();
        let mut cfg = toy_config(0);
        cfg.optimizer = OptimizerConfig::sgd(1e10, 0.9, 0.0, None);
        match train(&mut m, &x, Labels::Values(&y), &cfg) {
            Err(Error::Diverged { epoch, batch }) => assert!(epoch < 30 && batch < 4),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
