//! Central finite-difference check of tape gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::layers::{BatchNorm, Binding, Dense, Dropout, Init, Mode, Parameters};
use crate::loss::{graph, Labels, LossConfig, LossKind};
use crate::model::{ArchitectureConfig, HiddenSpec, SelectiveNet};
use crate::rng::{self, Rng, Stream};
use crate::tape::{ReduceOp, Tape, Var};
use crate::tensor::Tensor;

/// Worst-case disagreement found by [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compare analytic gradients against `(f(θ+h) − f(θ−h)) / 2h` for every
/// coordinate of every parameter.
///
/// `f` builds a scalar on a fresh tape from the parameter leaves it is given.
/// A coordinate whose absolute disagreement is at most `floor` counts as
/// exact; otherwise its error is `|a − n| / max(|a|, |n|)`.
pub fn finite_difference_check<F>(mut f: F, params: &[Tensor], h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        bail!(Contract, "finite-difference step must be positive, got {h}");
    }
    let base = evaluate(&mut f, params)?;
    let again = evaluate(&mut f, params)?;
    if base.to_bits() != again.to_bits() {
        bail!(Oracle, "function is not deterministic: {base} then {again}");
    }

    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect::<Vec<_>>()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = evaluate(&mut f, &work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = evaluate(&mut f, &work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[i];
            let diff = (a - numeric).abs();
            let err = if diff <= floor {
                0.0
            } else {
                diff / a.abs().max(numeric.abs())
            };
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((p, i));
            }
        }
    }
    Ok(report)
}

fn evaluate<F>(f: &mut F, values: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.item(out)
}

/// Step used by [`standard_suite`].
pub const SUITE_STEP: f64 = 1e-5;
/// Absolute agreement floor used by [`standard_suite`].
pub const SUITE_FLOOR: f64 = 1e-8;

/// One named case of [`standard_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random weights so every output coordinate reaches the scalar differently.
fn weighted_sum(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = t.constant(w.clone());
    let p = t.mul(y, wv)?;
    t.sum(p)
}

/// Finite-difference checks of every op, layer, loss term and the full
/// training objective, all drawn from `seed`.
pub fn standard_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut r = rng::seeded(seed);
    let (n, d, k) = (6usize, 4usize, 3usize);
    let mut out = Vec::new();
    let mut check = |name: &'static str, f: &mut dyn FnMut(&mut Tape, &[Var]) -> Result<Var>, params: &[Tensor]| {
        let report = finite_difference_check(|t, v| f(t, v), params, SUITE_STEP, SUITE_FLOOR)?;
        out.push(SuiteCase { name, report });
        Result::Ok(())
    };

    let a = uniform(&mut r, &[n, d], -1.0, 1.0);
    let b = uniform(&mut r, &[d, k], -1.0, 1.0);
    let w = uniform(&mut r, &[n, k], -1.0, 1.0);
    check(
        "matmul",
        &mut |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, &w)
        },
        &[a.clone(), b.clone()],
    )?;

    let x = uniform(&mut r, &[n, d], -2.0, 2.0);
    let y = uniform(&mut r, &[n, d], 0.5, 2.0);
    let wd = uniform(&mut r, &[n, d], -1.0, 1.0);
    check(
        "elementwise",
        &mut |t, v| {
            let s = t.add(v[0], v[1])?;
            let m = t.mul(s, v[0])?;
            let q = t.div(m, v[1])?;
            let e = t.exp(v[0])?;
            let l = t.log(v[1])?;
            let sg = t.sigmoid(v[0])?;
            let rl = t.relu(v[0])?;
            let mx = t.max0(v[0])?;
            let sq = t.square(mx)?;
            let neg = t.neg(sg)?;
            let mut acc = t.sub(q, e)?;
            for term in [l, neg, rl, sq] {
                acc = t.add(acc, term)?;
            }
            let sc = t.scale(acc, 0.7)?;
            let cl = t.clamp_min(sc, -1e9)?;
            weighted_sum(t, cl, &wd)
        },
        &[x.clone(), y],
    )?;

    let wr = uniform(&mut r, &[d], -1.0, 1.0);
    check(
        "reductions",
        &mut |t, v| {
            let s0 = t.reduce(ReduceOp::Sum, v[0], Some(0))?;
            let m1 = t.reduce(ReduceOp::Mean, v[0], Some(1))?;
            let mx = t.reduce(ReduceOp::Max, v[0], Some(0))?;
            let a = weighted_sum(t, s0, &wr)?;
            let b = t.sum(m1)?;
            let c = weighted_sum(t, mx, &wr)?;
            let all = t.reduce(ReduceOp::Max, v[0], None)?;
            let ab = t.add(a, b)?;
            let abc = t.add(ab, c)?;
            t.add(abc, all)
        },
        core::slice::from_ref(&x),
    )?;

    let row = uniform(&mut r, &[d], -1.0, 1.0);
    check(
        "broadcast_reshape",
        &mut |t, v| {
            let br = t.broadcast_rows(v[0], n)?;
            let s = t.mul(br, v[1])?;
            let flat = t.reshape(s, &[n * d])?;
            let back = t.reshape(flat, &[n, d])?;
            weighted_sum(t, back, &wd)
        },
        &[row, x.clone()],
    )?;

    let logits = uniform(&mut r, &[n, k], -2.0, 2.0);
    let classes: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    check(
        "softmax_cross_entropy",
        &mut |t, v| {
            let p = t.softmax(v[0])?;
            let l = graph::task_loss(t, LossKind::CrossEntropy, p, Labels::Classes(&classes))?;
            let extra = weighted_sum(t, p, &w)?;
            let m = t.mean(l)?;
            t.add(m, extra)
        },
        &[logits],
    )?;

    let targets: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let pred = uniform(&mut r, &[n], -1.0, 1.0);
    check(
        "squared_loss",
        &mut |t, v| {
            let l = graph::task_loss(t, LossKind::Squared, v[0], Labels::Values(&targets))?;
            t.mean(l)
        },
        &[pred],
    )?;

    let mut params = Parameters::new();
    let dense = Dense::new(&mut params, "d", d, k, Init::HeUniform, &mut r)?;
    let bias = uniform(&mut r, &[k], -0.5, 0.5);
    *params.get_mut(dense.bias) = bias;
    check(
        "dense",
        &mut |t, v| {
            let b = Binding::from_vars(v[1..].to_vec());
            let y = dense.forward(t, &b, v[0])?;
            weighted_sum(t, y, &w)
        },
        &[
            x.clone(),
            params.get(dense.weight).clone(),
            params.get(dense.bias).clone(),
        ],
    )?;

    let mut bn_params = Parameters::new();
    let mut bn = BatchNorm::new(&mut bn_params, "bn", d, 0.9, 1e-5)?;
    let gamma = uniform(&mut r, &[d], 0.5, 1.5);
    let beta = uniform(&mut r, &[d], -0.5, 0.5);
    check(
        "batch_norm_train",
        &mut |t, v| {
            let b = Binding::from_vars(v[1..].to_vec());
            let (y, _) = bn.forward(t, &b, v[0], Mode::Train)?;
            weighted_sum(t, y, &wd)
        },
        &[x.clone(), gamma.clone(), beta.clone()],
    )?;
    bn.running_mean = (0..d).map(|_| r.random_range(-0.5..0.5)).collect();
    bn.running_var = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
    check(
        "batch_norm_eval",
        &mut |t, v| {
            let b = Binding::from_vars(v[1..].to_vec());
            let (y, _) = bn.forward(t, &b, v[0], Mode::Eval)?;
            weighted_sum(t, y, &wd)
        },
        &[x.clone(), gamma, beta],
    )?;

    let drop = Dropout::new(0.3)?;
    check(
        "dropout",
        &mut |t, v| {
            let mut dr = rng::stream(seed, Stream::Dropout);
            let y = drop.forward(t, v[0], Mode::Train, Some(&mut dr))?;
            weighted_sum(t, y, &wd)
        },
        core::slice::from_ref(&x),
    )?;

    let losses = uniform(&mut r, &[n], 0.1, 3.0);
    let g = uniform(&mut r, &[n], 0.05, 0.95);
    for (name, coverage) in [("selective_loss_active", 0.999), ("selective_loss_inactive", 0.01)] {
        let cfg = LossConfig::new(coverage, LossKind::Squared);
        check(
            name,
            &mut |t, v| Ok(graph::selective_loss(t, v[0], v[1], &cfg)?.loss),
            &[losses.clone(), g.clone()],
        )?;
    }
    let h_losses = uniform(&mut r, &[n], 0.1, 3.0);
    let cfg = LossConfig::new(0.999, LossKind::Squared);
    check(
        "combined_loss",
        &mut |t, v| {
            let s = graph::selective_loss(t, v[0], v[1], &cfg)?.loss;
            let a = graph::auxiliary_loss(t, v[2])?;
            graph::total_loss(t, s, a, cfg.alpha)
        },
        &[losses, g, h_losses],
    )?;

    let hidden = |w| HiddenSpec {
        dropout: Some(0.2),
        ..HiddenSpec::relu_bn(w)
    };
    let mut cls = ArchitectureConfig::classification(d, k, &[5]);
    cls.body = vec![hidden(5)];
    cls.selection_hidden = 3;
    let mut reg = ArchitectureConfig::regression(d);
    reg.body = vec![hidden(5)];
    reg.selection_hidden = 3;
    let xin = uniform(&mut r, &[n, d], -1.5, 1.5);
    for (name, arch, labels, kind) in [
        (
            "objective_classification",
            cls,
            Labels::Classes(&classes),
            LossKind::CrossEntropy,
        ),
        ("objective_regression", reg, Labels::Values(&targets), LossKind::Squared),
    ] {
        let model = SelectiveNet::build(&arch, seed)?;
        let cfg = LossConfig::new(0.9, kind);
        let mut p = vec![xin.clone()];
        p.extend(model.parameters().tensors().iter().map(|t| {
            let mut t = t.clone();
            for v in t.data_mut() {
                if *v == 0.0 {
                    *v = r.random_range(-0.1..0.1);
                }
            }
            t
        }));
        check(
            name,
            &mut |t, v| {
                let mut m = model.clone();
                let mut dr = rng::stream(seed, Stream::Dropout);
                let heads = m.forward(
                    t,
                    &Binding::from_vars(v[1..].to_vec()),
                    v[0],
                    Mode::Train,
                    Some(&mut dr),
                )?;
                Ok(graph::objective(t, &heads, labels, &cfg)?.total)
            },
            &p,
        )?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use core::cell::Cell;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = xᵀ A x with A symmetric positive definite
        let a = Tensor::from_rows(&[[2.0, 0.5, 0.0], [0.5, 3.0, -1.0], [0.0, -1.0, 4.0]]).unwrap();
        let x = Tensor::matrix(3, 1, alloc::vec![0.7, -1.3, 2.1]).unwrap();
        let r = finite_difference_check(
            |t, v| {
                let am = t.constant(a.clone());
                let ax = t.matmul(am, v[0])?;
                let prod = t.mul(ax, v[0])?;
                t.sum(prod)
            },
            &[x],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let r = finite_difference_check(
            |t, _| Ok(t.scalar(4.2)),
            &[Tensor::vector(alloc::vec![1.0, 2.0])],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let calls = Cell::new(0.0);
        let err = finite_difference_check(
            |t, v| {
                calls.set(calls.get() + 1.0);
                let s = t.sum(v[0])?;
                let k = t.scalar(calls.get());
                t.add(s, k)
            },
            &[Tensor::vector(alloc::vec![1.0])],
            1e-5,
            1e-8,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn suite_covers_every_case() {
        let cases = standard_suite(3).unwrap();
        assert_eq!(cases.len(), 15);
        for c in cases {
            assert!(c.report.max_relative_error < 1e-5, "{}: {:?}", c.name, c.report);
        }
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let err = finite_difference_check(|t, v| t.sum(v[0]), &[Tensor::scalar(1.0)], 0.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
