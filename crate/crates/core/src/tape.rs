//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]. Nodes only reference
//! earlier nodes, so the tape is acyclic and its index order is a
//! topological order; [`Tape::backward`] walks it once in reverse.
//!
//! Broadcasting is limited to scalar-with-tensor and equal shapes. Adding a
//! bias row to a batch goes through the explicit [`Tape::broadcast_rows`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::math;
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
    /// `max(0, a)`; shares the ReLU rule, exposed separately for the penalty term.
    Max0,
    Neg,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, f64),
    ClampMin(Var, f64),
    Reduce {
        op: ReduceOp,
        input: Var,
        axis: Option<usize>,
        /// For `Max`: flat input index of the winner for each output element.
        winners: Vec<usize>,
    },
    Reshape(Var),
    BroadcastRows(Var),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
        /// Train mode differentiates through the batch statistics.
        batch_stats: bool,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded recording of a forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one [`Tape::backward`] call.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not require grad or the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node recorded after the first `len`. Vars pointing past
    /// `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        #[cfg(debug_assertions)]
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let _ = name;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        if op == BinaryOp::Div {
            let zero = if bv.is_scalar() {
                bv.data()[0] == 0.0
            } else {
                bv.data().contains(&0.0)
            };
            if zero {
                bail!(Domain, "division by zero");
            }
        }
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape(), data)?
        } else if bv.is_scalar() {
            let y = bv.data()[0];
            av.map(|x| f(x, y))
        } else if av.is_scalar() {
            let x = av.data()[0];
            bv.map(|y| f(x, y))
        } else {
            return Err(dim_err("elementwise", av, bv));
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Binary(op, a, b), rg, "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = match op {
            UnaryOp::Relu | UnaryOp::Max0 => av.map(|x| if x > 0.0 { x } else { 0.0 }),
            UnaryOp::Sigmoid => av.map(math::sigmoid),
            UnaryOp::Exp => av.map(math::exp),
            UnaryOp::Log => {
                if let Some(bad) = av.data().iter().find(|&&x| !(x > 0.0)) {
                    bail!(Domain, "log of non-positive value {bad}");
                }
                av.map(math::ln)
            }
            UnaryOp::Square => av.map(|x| x * x),
            UnaryOp::Neg => av.map(|x| -x),
        };
        let rg = self.rg(a);
        self.push(value, Op::Unary(op, a), rg, "unary")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn max0(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Max0, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg, "scale")
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| if x < floor { floor } else { x });
        let rg = self.rg(a);
        self.push(value, Op::ClampMin(a, floor), rg, "clamp_min")
    }

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            bail!(Domain, "{op:?} reduction over an empty tensor");
        }
        let (outer, len, inner, out_shape) = match axis {
            None => (1, av.len(), 1, Vec::new()),
            Some(ax) => {
                if ax >= av.rank() {
                    bail!(Contract, "axis {ax} out of range for rank {}", av.rank());
                }
                let s = av.shape();
                let outer: usize = s[..ax].iter().product();
                let inner: usize = s[ax + 1..].iter().product();
                let mut out_shape = s.to_vec();
                out_shape.remove(ax);
                (outer, s[ax], inner, out_shape)
            }
        };
        let d = av.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut winners = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut s = 0.0;
                        for j in 0..len {
                            s += d[idx(j)];
                        }
                        out.push(if op == ReduceOp::Mean { s / len as f64 } else { s });
                    }
                    ReduceOp::Max => {
                        let mut best = idx(0);
                        for j in 1..len {
                            if d[idx(j)] > d[best] {
                                best = idx(j);
                            }
                        }
                        out.push(d[best]);
                        winners.push(best);
                    }
                }
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(a);
        self.push(
            value,
            Op::Reduce {
                op,
                input: a,
                axis,
                winners,
            },
            rg,
            "reduce",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, None)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg, "reshape")
    }

    /// Repeat a `[n]` vector as the rows of a `[rows × n]` matrix.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 1 {
            return Err(dim_err("broadcast_rows", av, av));
        }
        let n = av.len();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let value = Tensor::matrix(rows, n, data)?;
        let rg = self.rg(a);
        self.push(value, Op::BroadcastRows(a), rg, "broadcast_rows")
    }

    /// Row-wise softmax of a `[batch × classes]` matrix, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || av.shape()[1] < 2 {
            bail!(Contract, "softmax needs [batch × classes≥2], got {:?}", av.shape());
        }
        let value = softmax_rows(av);
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg, "softmax")
    }

    /// Pick column `indices[i]` from row `i` of a `[batch × k]` matrix.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 || av.shape()[0] != indices.len() {
            return Err(Error::Dimension {
                op: "gather",
                left: av.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        let k = av.shape()[1];
        let mut out = Vec::with_capacity(indices.len());
        for (i, &c) in indices.iter().enumerate() {
            if c >= k {
                bail!(Data, "class index {c} out of range for {k} classes");
            }
            out.push(av.data()[i * k + c]);
        }
        let value = Tensor::vector(out);
        let rg = self.rg(a);
        self.push(value, Op::Gather(a, indices.to_vec()), rg, "gather")
    }

    /// Per-column affine normalization of a `[batch × features]` matrix.
    ///
    /// With `stats = None` the batch mean and biased variance are used and
    /// returned (train mode). With `Some((mean, var))` the given statistics are
    /// treated as constants (eval mode).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(dim_err("batch_norm", xv, self.value(gamma)));
        }
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        if self.value(gamma).shape() != [f] || self.value(beta).shape() != [f] {
            return Err(dim_err("batch_norm", xv, self.value(gamma)));
        }
        let (mean, var) = match stats {
            Some((m, v)) => {
                if m.len() != f || v.len() != f {
                    bail!(Contract, "running statistics have wrong width");
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                if n < 2 {
                    bail!(Contract, "train-mode batch norm needs a batch of at least 2, got {n}");
                }
                let d = xv.data();
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for c in 0..f {
                        mean[c] += d[r * f + c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for c in 0..f {
                        let e = d[r * f + c] - mean[c];
                        var[c] += e * e;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
        let d = xv.data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for c in 0..f {
                let z = (d[r * f + c] - mean[c]) * inv_std[c];
                normalized[r * f + c] = z;
                out[r * f + c] = g[c] * z + b[c];
            }
        }
        let value = Tensor::matrix(n, f, out)?;
        let normalized = Tensor::matrix(n, f, normalized)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            value,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: stats.is_none(),
            },
            rg,
            "batch_norm",
        )?;
        Ok((v, mean, var))
    }

    /// Gradients of a scalar `root` with respect to every node that requires grad.
    ///
    /// Calling this repeatedly on the same tape yields identical results; no
    /// state is accumulated between calls.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            bail!(
                Contract,
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.rg(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            self.propagate(node, &upstream, &mut grads)?;
            grads[i] = Some(upstream);
        }
        // Only keep gradients for nodes that asked for them.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) {
        if !self.rg(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, up.data(), bv.data(), &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(k, m, n, av.data(), up.data(), &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Binary(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let out_shape = node.value.shape();
                // Local partials evaluated at every output position.
                let n = up.len();
                let at = |t: &Tensor, i: usize| {
                    if t.is_scalar() && n != 1 {
                        t.data()[0]
                    } else {
                        t.data()[i]
                    }
                };
                let mut da = vec![0.0; n];
                let mut db = vec![0.0; n];
                for i in 0..n {
                    let (x, y, u) = (at(av, i), at(bv, i), up.data()[i]);
                    let (pa, pb) = match op {
                        BinaryOp::Add => (1.0, 1.0),
                        BinaryOp::Sub => (1.0, -1.0),
                        BinaryOp::Mul => (y, x),
                        BinaryOp::Div => (1.0 / y, -x / (y * y)),
                    };
                    da[i] = u * pa;
                    db[i] = u * pb;
                }
                let fold = |d: Vec<f64>, t: &Tensor| -> Result<Tensor> {
                    if t.shape() == out_shape {
                        Tensor::new(out_shape, d)
                    } else {
                        Ok(Tensor::scalar(d.iter().sum()))
                    }
                };
                if self.rg(*a) {
                    self.accumulate(grads, *a, fold(da, av)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, fold(db, bv)?);
                }
            }
            Op::Unary(op, a) => {
                let av = self.value(*a);
                let out = &node.value;
                let d: Vec<f64> = (0..up.len())
                    .map(|i| {
                        let (x, y, u) = (av.data()[i], out.data()[i], up.data()[i]);
                        u * match op {
                            UnaryOp::Relu | UnaryOp::Max0 => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Sigmoid => y * (1.0 - y),
                            UnaryOp::Exp => y,
                            UnaryOp::Log => 1.0 / x,
                            UnaryOp::Square => 2.0 * x,
                            UnaryOp::Neg => -1.0,
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(av.shape(), d)?);
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, up.map(|u| u * k));
            }
            Op::ClampMin(a, floor) => {
                let av = self.value(*a);
                let d = av
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&x, &u)| if x < *floor { 0.0 } else { u })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(av.shape(), d)?);
            }
            Op::Reduce {
                op,
                input,
                axis,
                winners,
            } => {
                let av = self.value(*input);
                let mut d = vec![0.0; av.len()];
                match op {
                    ReduceOp::Max => {
                        for (w, &u) in winners.iter().zip(up.data()) {
                            d[*w] += u;
                        }
                    }
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let (outer, len, inner) = match axis {
                            None => (1, av.len(), 1),
                            Some(ax) => {
                                let s = av.shape();
                                (s[..*ax].iter().product(), s[*ax], s[ax + 1..].iter().product())
                            }
                        };
                        let scale = if *op == ReduceOp::Mean { 1.0 / len as f64 } else { 1.0 };
                        for o in 0..outer {
                            for j in 0..len {
                                for i in 0..inner {
                                    d[(o * len + j) * inner + i] = up.data()[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(av.shape(), d)?);
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, up.reshape(self.value(*a).shape())?);
            }
            Op::BroadcastRows(a) => {
                let n = self.value(*a).len();
                let mut d = vec![0.0; n];
                for row in up.data().chunks(n.max(1)) {
                    for (acc, v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *a, Tensor::vector(d));
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let k = p.shape()[1];
                let mut d = vec![0.0; p.len()];
                for r in 0..p.shape()[0] {
                    let pr = &p.data()[r * k..(r + 1) * k];
                    let ur = &up.data()[r * k..(r + 1) * k];
                    let dot: f64 = pr.iter().zip(ur).map(|(x, y)| x * y).sum();
                    for c in 0..k {
                        d[r * k + c] = pr[c] * (ur[c] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(p.shape(), d)?);
            }
            Op::Gather(a, indices) => {
                let av = self.value(*a);
                let k = av.shape()[1];
                let mut d = vec![0.0; av.len()];
                for (i, &c) in indices.iter().enumerate() {
                    d[i * k + c] = up.data()[i];
                }
                self.accumulate(grads, *a, Tensor::new(av.shape(), d)?);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats,
            } => {
                let (n, f) = (normalized.shape()[0], normalized.shape()[1]);
                let z = normalized.data();
                let u = up.data();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..n {
                    for c in 0..f {
                        dgamma[c] += u[r * f + c] * z[r * f + c];
                        dbeta[c] += u[r * f + c];
                    }
                }
                if self.rg(*input) {
                    let mut dx = vec![0.0; n * f];
                    for c in 0..f {
                        let s = g[c] * inv_std[c];
                        if *batch_stats {
                            // dx = γ/σ · (u − mean(u) − z·mean(u·z))
                            let mu = dbeta[c] / n as f64;
                            let muz = dgamma[c] / n as f64;
                            for r in 0..n {
                                dx[r * f + c] = s * (u[r * f + c] - mu - z[r * f + c] * muz);
                            }
                        } else {
                            for r in 0..n {
                                dx[r * f + c] = s * u[r * f + c];
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::matrix(n, f, dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::vector(dgamma));
                self.accumulate(grads, *beta, Tensor::vector(dbeta));
            }
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(logits.shape(), out).expect("shape preserved")
}

impl core::fmt::Display for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&format!("%{}", self.0))
    }
}
