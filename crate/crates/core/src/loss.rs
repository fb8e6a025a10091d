//! Selective objective, auxiliary loss and their convex combination.
//!
//! Plain functions work on slices and are used for reporting and oracles.
//! The [`graph`] submodule builds the same quantities on a [`Tape`] for
//! training.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::model::{HeadVars, Task};
use crate::tape::{Tape, Var};

/// Clamp applied to the true-class probability inside cross-entropy.
pub const CE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Squared,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification { .. } => LossKind::CrossEntropy,
            Task::Regression => LossKind::Squared,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub coverage: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub kind: LossKind,
}

fn default_lambda() -> f64 {
    32.0
}
fn default_alpha() -> f64 {
    0.5
}

impl LossConfig {
    pub fn new(coverage: f64, kind: LossKind) -> Self {
        Self {
            coverage,
            lambda: default_lambda(),
            alpha: default_alpha(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            bail!(Config, "target coverage must lie in (0, 1], got {}", self.coverage);
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!(
                Config,
                "penalty weight must be a finite non-negative number, got {}",
                self.lambda
            );
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!(Config, "mixing weight must lie in [0, 1], got {alpha}");
    }
    Ok(())
}

/// Borrowed targets for a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Labels<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

impl Labels<'_> {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `max(0, a)²`
pub fn psi(a: f64) -> f64 {
    let m = if a > 0.0 { a } else { 0.0 };
    m * m
}

pub fn empirical_coverage(g: &[f64]) -> Result<f64> {
    if g.is_empty() {
        bail!(Contract, "coverage of an empty batch");
    }
    Ok(g.iter().sum::<f64>() / g.len() as f64)
}

/// `mean(ℓ·g) / mean(g)`
pub fn empirical_selective_risk(losses: &[f64], g: &[f64]) -> Result<f64> {
    if losses.len() != g.len() {
        bail!(Contract, "{} losses but {} selection values", losses.len(), g.len());
    }
    let phi = empirical_coverage(g)?;
    if phi == 0.0 {
        return Err(Error::DegenerateCoverage);
    }
    let weighted = losses.iter().zip(g).map(|(l, s)| l * s).sum::<f64>() / g.len() as f64;
    Ok(weighted / phi)
}

/// `r̂ + λ·Ψ(c − φ̂)`
pub fn selective_loss(losses: &[f64], g: &[f64], config: &LossConfig) -> Result<f64> {
    let r = empirical_selective_risk(losses, g)?;
    let phi = empirical_coverage(g)?;
    Ok(r + config.lambda * psi(config.coverage - phi))
}

pub fn auxiliary_loss(h_losses: &[f64]) -> Result<f64> {
    if h_losses.is_empty() {
        bail!(Contract, "auxiliary loss of an empty batch");
    }
    Ok(h_losses.iter().sum::<f64>() / h_losses.len() as f64)
}

pub fn total_loss(selective: f64, auxiliary: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * selective + (1.0 - alpha) * auxiliary)
}

/// Tape versions of the loss terms.
pub mod graph {
    use super::*;
    use crate::tensor::Tensor;

    /// Per-sample task loss `[batch]`.
    pub fn task_loss(tape: &mut Tape, kind: LossKind, prediction: Var, labels: Labels<'_>) -> Result<Var> {
        match (kind, labels) {
            (LossKind::CrossEntropy, Labels::Classes(c)) => {
                let p = tape.gather(prediction, c)?;
                let p = tape.clamp_min(p, CE_FLOOR)?;
                let lp = tape.log(p)?;
                tape.neg(lp)
            }
            (LossKind::Squared, Labels::Values(y)) => {
                let yv = tape.constant(Tensor::vector(y.to_vec()));
                let d = tape.sub(prediction, yv)?;
                tape.square(d)
            }
            (k, _) => bail!(Contract, "{k:?} loss does not match the label type"),
        }
    }

    pub fn psi(tape: &mut Tape, a: Var) -> Result<Var> {
        let m = tape.max0(a)?;
        tape.square(m)
    }

    pub fn coverage(tape: &mut Tape, g: Var) -> Result<Var> {
        if tape.value(g).is_empty() {
            bail!(Contract, "coverage of an empty batch");
        }
        tape.mean(g)
    }

    pub fn selective_risk(tape: &mut Tape, losses: Var, g: Var) -> Result<Var> {
        let phi = coverage(tape, g)?;
        selective_risk_with(tape, losses, g, phi)
    }

    fn selective_risk_with(tape: &mut Tape, losses: Var, g: Var, phi: Var) -> Result<Var> {
        if tape.value(phi).data()[0] == 0.0 {
            return Err(Error::DegenerateCoverage);
        }
        let lg = tape.mul(losses, g)?;
        let num = tape.mean(lg)?;
        tape.div(num, phi)
    }

    /// Selective loss with its two components.
    pub fn selective_loss(tape: &mut Tape, losses: Var, g: Var, config: &LossConfig) -> Result<SelectiveTerms> {
        let phi = coverage(tape, g)?;
        let risk = selective_risk_with(tape, losses, g, phi)?;
        let c = tape.scalar(config.coverage);
        let gap = tape.sub(c, phi)?;
        let pen = psi(tape, gap)?;
        let pen = tape.scale(pen, config.lambda)?;
        let loss = tape.add(risk, pen)?;
        Ok(SelectiveTerms {
            loss,
            risk,
            coverage: phi,
        })
    }

    pub fn auxiliary_loss(tape: &mut Tape, h_losses: Var) -> Result<Var> {
        if tape.value(h_losses).is_empty() {
            bail!(Contract, "auxiliary loss of an empty batch");
        }
        tape.mean(h_losses)
    }

    pub fn total_loss(tape: &mut Tape, selective: Var, auxiliary: Var, alpha: f64) -> Result<Var> {
        check_alpha(alpha)?;
        let a = tape.scale(selective, alpha)?;
        let b = tape.scale(auxiliary, 1.0 - alpha)?;
        tape.add(a, b)
    }

    #[derive(Clone, Copy, Debug)]
    pub struct SelectiveTerms {
        pub loss: Var,
        pub risk: Var,
        pub coverage: Var,
    }

    /// All terms of the training objective for one forward pass.
    #[derive(Clone, Copy, Debug)]
    pub struct Objective {
        pub total: Var,
        /// Absent for a model without a selection head.
        pub selective: Option<SelectiveTerms>,
        pub auxiliary: Option<Var>,
    }

    /// `α·L(f, g) + (1 − α)·Lh`, falling back to the selective loss alone
    /// without `h`, and to the plain mean task loss without `g`.
    pub fn objective(tape: &mut Tape, heads: &HeadVars, labels: Labels<'_>, config: &LossConfig) -> Result<Objective> {
        config.validate()?;
        let f_losses = task_loss(tape, config.kind, heads.f, labels)?;
        let Some(g) = heads.g else {
            let total = tape.mean(f_losses)?;
            return Ok(Objective {
                total,
                selective: None,
                auxiliary: None,
            });
        };
        let sel = selective_loss(tape, f_losses, g, config)?;
        let (total, aux) = match heads.h {
            Some(h) => {
                let hl = task_loss(tape, config.kind, h, labels)?;
                let aux = auxiliary_loss(tape, hl)?;
                (total_loss(tape, sel.loss, aux, config.alpha)?, Some(aux))
            }
            None => (sel.loss, None),
        };
        Ok(Objective {
            total,
            selective: Some(sel),
            auxiliary: aux,
        })
    }
}

/// Per-sample task losses without a tape.
pub fn task_loss_values(kind: LossKind, prediction: &crate::Tensor, labels: Labels<'_>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = tape.constant(prediction.clone());
    let l = graph::task_loss(&mut tape, kind, p, labels)?;
    Ok(tape.value(l).data().to_vec())
}
