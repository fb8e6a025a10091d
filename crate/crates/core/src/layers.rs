//! Network layers and the parameter store they draw from.
//!
//! Layers hold [`ParamId`]s into a [`Parameters`] store rather than owning
//! tensors. Each forward pass binds the whole store onto a tape once, and the
//! resulting [`Binding`] maps ids to tape variables so gradients can be routed
//! back to the store in declaration order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Bind every parameter as a gradient-receiving leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Bind every parameter as a constant (inference without gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Tape variables for a bound [`Parameters`] store.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wrap tape variables holding a [`Parameters`] store's tensors, in
    /// declaration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in declaration order, zero where unused.
    pub fn collect(&self, grads: &Gradients, params: &Parameters) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
    /// Eval-mode normalization with dropout still sampling masks (MC-dropout).
    ForcedDropout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// U(±√(6/fan_in)), for layers followed by ReLU.
    HeUniform,
    /// U(±√(6/(fan_in+fan_out))).
    GlorotUniform,
}

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new(
        params: &mut Parameters,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            bail!(
                Config,
                "dense layer {name} has a zero width ({in_features}→{out_features})"
            );
        }
        let limit = match init {
            Init::HeUniform => math::sqrt(6.0 / in_features as f64),
            Init::GlorotUniform => math::sqrt(6.0 / (in_features + out_features) as f64),
        };
        let w: Vec<f64> = (0..in_features * out_features)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let weight = params.push(
            alloc::format!("{name}.weight"),
            Tensor::matrix(in_features, out_features, w)?,
        );
        let bias = params.push(alloc::format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        let xs = tape.value(x).shape();
        if xs.len() != 2 || xs[1] != self.in_features {
            return Err(Error::Dimension {
                op: "dense",
                left: xs.to_vec(),
                right: vec![self.in_features, self.out_features],
            });
        }
        let rows = xs[0];
        let xw = tape.matmul(x, b.var(self.weight))?;
        let bias = tape.broadcast_rows(b.var(self.bias), rows)?;
        tape.add(xw, bias)
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Batch normalization over the feature columns of a `[batch × features]` input.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight kept on the running statistics at each update.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(params: &mut Parameters, name: &str, features: usize, momentum: f64, eps: f64) -> Result<Self> {
        if features == 0 {
            bail!(Config, "batch norm {name} has zero features");
        }
        if !(momentum > 0.0 && momentum < 1.0) || !(eps > 0.0) {
            bail!(Config, "batch norm {name}: momentum must be in (0,1) and eps positive");
        }
        let gamma = params.push(alloc::format!("{name}.gamma"), Tensor::full(&[features], 1.0));
        let beta = params.push(alloc::format!("{name}.beta"), Tensor::zeros(&[features]));
        Ok(Self {
            gamma,
            beta,
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            eps,
        })
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Train mode normalizes by batch statistics and returns them for
    /// [`BatchNorm::update_running`]; other modes use the running statistics.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats>)> {
        let (g, be) = (b.var(self.gamma), b.var(self.beta));
        match mode {
            Mode::Train => {
                let n = tape.value(x).rows();
                let (y, mean, var) = tape.batch_norm(x, g, be, self.eps, None)?;
                Ok((y, Some(BatchStats { mean, var, count: n })))
            }
            Mode::Eval | Mode::ForcedDropout => {
                let (y, _, _) = tape.batch_norm(x, g, be, self.eps, Some((&self.running_mean, &self.running_var)))?;
                Ok((y, None))
            }
        }
    }

    /// `running ← momentum·running + (1−momentum)·batch`, using the unbiased
    /// batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.features() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * stats.var[c] * correction;
        }
    }
}

/// Batch statistics observed during a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Inverted dropout: survivors are scaled by `1/(1−p)` so eval is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            bail!(Config, "dropout rate must be in [0, 1), got {rate}");
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mode: Mode, rng: Option<&mut Rng>) -> Result<Var> {
        if mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let Some(rng) = rng else {
            bail!(Contract, "dropout in {mode:?} mode needs a random generator");
        };
        let shape = tape.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::new(&shape, mask)?);
        tape.mul(x, m)
    }
}

/// Row-wise softmax on the tape. Requires at least two classes.
pub fn softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    tape.softmax(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn bound(params: &Parameters) -> (Tape, Binding) {
        let mut t = Tape::new();
        let b = params.bind(&mut t);
        (t, b)
    }

    #[test]
    fn dense_identity_weights() {
        let mut p = Parameters::new();
        let d = Dense::new(&mut p, "d", 2, 2, Init::GlorotUniform, &mut rng::seeded(0)).unwrap();
        *p.get_mut(d.weight) = Tensor::identity(2);
        let (mut t, b) = bound(&p);
        let x = t.constant(Tensor::from_rows(&[[1.5, -2.0], [0.0, 3.0]]).unwrap());
        let y = d.forward(&mut t, &b, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn dense_hand_value() {
        let mut p = Parameters::new();
        let d = Dense::new(&mut p, "d", 2, 1, Init::HeUniform, &mut rng::seeded(0)).unwrap();
        *p.get_mut(d.weight) = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
        *p.get_mut(d.bias) = Tensor::vector(vec![0.5]);
        let (mut t, b) = bound(&p);
        let x = t.constant(Tensor::from_rows(&[[1.0, 1.0]]).unwrap());
        let y = d.forward(&mut t, &b, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.5]);
    }

    #[test]
    fn dense_empty_batch_keeps_width() {
        let mut p = Parameters::new();
        let d = Dense::new(&mut p, "d", 3, 5, Init::HeUniform, &mut rng::seeded(0)).unwrap();
        let (mut t, b) = bound(&p);
        let x = t.constant(Tensor::zeros(&[0, 3]));
        let y = d.forward(&mut t, &b, x).unwrap();
        assert_eq!(t.value(y).shape(), &[0, 5]);
    }

    #[test]
    fn dense_width_mismatch() {
        let mut p = Parameters::new();
        let d = Dense::new(&mut p, "d", 3, 5, Init::HeUniform, &mut rng::seeded(0)).unwrap();
        let (mut t, b) = bound(&p);
        let x = t.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(d.forward(&mut t, &b, x), Err(Error::Dimension { .. })));
        assert!(Dense::new(&mut p, "z", 0, 5, Init::HeUniform, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn batchnorm_two_point_column() {
        let mut p = Parameters::new();
        let bn = BatchNorm::new(&mut p, "bn", 1, 0.9, 1e-5).unwrap();
        let (mut t, b) = bound(&p);
        let x = t.constant(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap());
        let (y, stats) = bn.forward(&mut t, &b, x, Mode::Train).unwrap();
        assert_abs_diff_eq!(t.value(y).data()[0], -1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(t.value(y).data()[1], 1.0, epsilon = 1e-4);
        assert_eq!(stats.unwrap().mean, vec![2.0]);
    }

    #[test]
    fn batchnorm_fixed_point() {
        let mut p = Parameters::new();
        let bn = BatchNorm::new(&mut p, "bn", 1, 0.9, 1e-5).unwrap();
        let (mut t, b) = bound(&p);
        let data = vec![-1.0, 1.0, -1.0, 1.0];
        let x = t.constant(Tensor::matrix(4, 1, data.clone()).unwrap());
        let (y, _) = bn.forward(&mut t, &b, x, Mode::Train).unwrap();
        for (a, e) in t.value(y).data().iter().zip(&data) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-5);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_rows_and_eval_is_stateless() {
        let mut p = Parameters::new();
        let mut bn = BatchNorm::new(&mut p, "bn", 2, 0.9, 1e-5).unwrap();
        let (mut t, b) = bound(&p);
        let one = t.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            bn.forward(&mut t, &b, one, Mode::Train),
            Err(Error::Contract(_))
        ));

        let x = t.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 5.0], [0.0, -1.0]]).unwrap());
        let (_, stats) = bn.forward(&mut t, &b, x, Mode::Train).unwrap();
        bn.update_running(&stats.unwrap());
        let (y1, _) = bn.forward(&mut t, &b, x, Mode::Eval).unwrap();
        let (y2, _) = bn.forward(&mut t, &b, x, Mode::Eval).unwrap();
        assert_eq!(t.value(y1), t.value(y2));
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = Parameters::new();
        let mut bn = BatchNorm::new(&mut p, "bn", 1, 0.9, 1e-5).unwrap();
        bn.update_running(&BatchStats {
            mean: vec![2.0],
            var: vec![1.0],
            count: 2,
        });
        assert_abs_diff_eq!(bn.running_mean[0], 0.2, epsilon = 1e-15);
        // unbiased batch variance 2.0
        assert_abs_diff_eq!(bn.running_var[0], 0.9 + 0.1 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn dropout_modes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[4, 4], 2.0));
        let zero = Dropout::new(0.0).unwrap();
        for mode in [Mode::Train, Mode::Eval, Mode::ForcedDropout] {
            let y = zero.forward(&mut t, x, mode, Some(&mut rng::seeded(1))).unwrap();
            assert_eq!(t.value(y), t.value(x));
        }
        let half = Dropout::new(0.5).unwrap();
        let y = half.forward(&mut t, x, Mode::Eval, None).unwrap();
        assert_eq!(y, x);

        let a = half
            .forward(&mut t, x, Mode::ForcedDropout, Some(&mut rng::seeded(7)))
            .unwrap();
        let b = half
            .forward(&mut t, x, Mode::ForcedDropout, Some(&mut rng::seeded(7)))
            .unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert!(t.value(a).data().iter().all(|&v| v == 0.0 || v == 4.0));

        assert!(matches!(Dropout::new(1.0), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_contract() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::zeros(&[1, 10]));
        let p = softmax(&mut t, u).unwrap();
        for &v in t.value(p).data() {
            assert_abs_diff_eq!(v, 0.1, epsilon = 1e-15);
        }
        let l = Tensor::from_rows(&[[0.3, -1.2, 2.5]]).unwrap();
        let a = t.constant(l.clone());
        let b = t.constant(l.map(|v| v + 1000.0));
        let pa = softmax(&mut t, a).unwrap();
        let pb = softmax(&mut t, b).unwrap();
        for (x, y) in t.value(pa).data().iter().zip(t.value(pb).data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let one = t.constant(Tensor::zeros(&[2, 1]));
        assert!(softmax(&mut t, one).is_err());
    }
}
