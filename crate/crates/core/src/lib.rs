//! Selective prediction core.
//!
//! A dense `f64` tensor with a reverse-mode tape, the layers needed for
//! multilayer perceptrons, the three-headed SelectiveNet model, its
//! coverage-constrained objective, optimizers and training loop, post-training
//! coverage calibration and selective evaluation utilities.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, CSV ingestion
//! and the command line live in the `selnet` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod loss;
mod math;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ArchitectureConfig, Decision, HiddenSpec, Mode, Prediction, SelectiveNet, Task};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
