//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use selnet_core::data::{SplitSpec, SynthSpec};
use selnet_core::loss::{LossConfig, LossKind};
use selnet_core::model::{Activation, ArchitectureConfig, HiddenSpec, Task};
use selnet_core::optim::{OptimizerConfig, TrainConfig};

use crate::dataio::CsvSchema;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        schema: CsvSchema,
        /// Z-score regression targets for training; errors are still
        /// reported in original units.
        #[serde(default = "yes")]
        standardize_targets: bool,
    },
    Synthetic {
        samples: usize,
        classes: usize,
        dim: usize,
        noise_fraction: f64,
        /// Generator seed; the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
}

fn yes() -> bool {
    true
}

impl DataSpec {
    pub fn synth_spec(&self, run_seed: u64) -> Option<SynthSpec> {
        match *self {
            DataSpec::Synthetic {
                samples,
                classes,
                dim,
                noise_fraction,
                seed,
                radius,
            } => {
                let mut s = SynthSpec::new(seed.unwrap_or(run_seed), samples, classes, dim, noise_fraction);
                if let Some(r) = radius {
                    s.radius = r;
                }
                Some(s)
            }
            DataSpec::Csv { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    /// Split seed; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stratified: bool,
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: default_fractions(),
            seed: None,
            stratified: false,
        }
    }
}

impl SplitConfig {
    pub fn spec(&self, run_seed: u64) -> SplitSpec {
        SplitSpec {
            fractions: self.fractions,
            seed: self.seed.unwrap_or(run_seed),
            stratified: self.stratified,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default = "default_selection_hidden")]
    pub selection_hidden: usize,
    #[serde(default = "yes")]
    pub auxiliary: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_selection_hidden() -> usize {
    16
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            batch_norm: true,
            selection_hidden: default_selection_hidden(),
            auxiliary: true,
        }
    }
}

impl ModelSpec {
    pub fn architecture(&self, input_width: usize, task: Task, dropout: Option<f64>) -> ArchitectureConfig {
        let mut a = ArchitectureConfig::regression(input_width);
        a.task = task;
        a.body = self
            .hidden
            .iter()
            .map(|&w| HiddenSpec {
                width: w,
                activation: Activation::Relu,
                batch_norm: self.batch_norm,
                dropout,
            })
            .collect();
        a.selection_hidden = self.selection_hidden;
        a.selection_batch_norm = self.batch_norm;
        a.auxiliary = self.auxiliary;
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_coverage() -> f64 {
    0.8
}
fn default_lambda() -> f64 {
    32.0
}
fn default_alpha() -> f64 {
    0.5
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            coverage: default_coverage(),
            lambda: default_lambda(),
            alpha: default_alpha(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.05
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self { delta: default_delta() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// MC-dropout passes; the baseline is trained without dropout and the
    /// MC-dropout column is omitted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_passes: Option<usize>,
    #[serde(default = "default_mc_rate")]
    pub mc_rate: f64,
}

fn default_mc_rate() -> f64 {
    0.5
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            mc_passes: None,
            mc_rate: default_mc_rate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default)]
    pub baselines: BaselineSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a file; relative data paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DataSpec::Csv { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let DataSpec::Csv { path, .. } = &self.data {
            if !path.exists() {
                return Err(Error::Config(format!("data file {} does not exist", path.display())));
            }
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config(
                "hidden widths must be a non-empty list of positive numbers".into(),
            ));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("epoch count must be positive".into()));
        }
        self.train.optimizer.validate()?;
        self.split.spec(0).validate()?;
        self.loss_config(self.loss.coverage, LossKind::Squared).validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        let d = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(d[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn loss_config(&self, coverage: f64, kind: LossKind) -> LossConfig {
        LossConfig {
            coverage,
            lambda: self.loss.lambda,
            alpha: self.loss.alpha,
            kind,
        }
    }

    pub fn train_config(&self, seed: u64, coverage: f64, task: Task) -> TrainConfig {
        TrainConfig {
            optimizer: self.train.optimizer,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed,
            loss: self.loss_config(coverage, LossKind::for_task(task)),
            shuffle: self.train.shuffle,
        }
    }
}
