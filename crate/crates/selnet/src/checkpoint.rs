//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SELNETCK" | u32 version | u64 header length | header (UTF-8 TOML)
//!           | u64 value count | f64 values | 8-byte checksum
//! ```
//!
//! The values are every parameter tensor in declaration order followed by
//! the running mean and variance of each batch-norm layer. The checksum is
//! the first 8 bytes of the SHA-256 digest of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use selnet_core::calibration::CalibrationResult;
use selnet_core::data::{FeatureStats, TargetStats};
use selnet_core::{ArchitectureConfig, SelectiveNet, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SELNETCK";

/// Input and target transforms fitted on the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SelectiveNet,
    pub calibration: Option<CalibrationResult>,
    pub preprocessing: Preprocessing,
    pub run: Option<RunConfig>,
}

impl Checkpoint {
    pub fn new(model: SelectiveNet) -> Self {
        Self {
            model,
            calibration: None,
            preprocessing: Preprocessing::default(),
            run: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    selective: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trained_coverage: Option<f64>,
    architecture: ArchitectureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationResult>,
    preprocessing: Preprocessing,
    tensors: Vec<TensorEntry>,
    batch_norm_features: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunConfig>,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let m = &ck.model;
    let p = m.parameters();
    let header = Header {
        selective: m.is_selective(),
        trained_coverage: m.trained_coverage(),
        architecture: m.config().clone(),
        calibration: ck.calibration,
        preprocessing: ck.preprocessing.clone(),
        tensors: p
            .names()
            .iter()
            .zip(p.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        batch_norm_features: m.batch_norms().iter().map(|b| b.features()).collect(),
        run: ck.run.clone(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::Config(format!("cannot encode checkpoint header: {e}")))?;

    let mut values: Vec<f64> = Vec::new();
    for t in p.tensors() {
        values.extend_from_slice(t.data());
    }
    for b in m.batch_norms() {
        values.extend_from_slice(&b.running_mean);
        values.extend_from_slice(&b.running_var);
    }

    let mut out = Vec::with_capacity(32 + text.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let d = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&d[..8]);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("file is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)
        .map_err(|_| Error::Integrity("not a checkpoint file".into()))?
        != MAGIC
    {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 8 + 4 + 8 + 8 + 8 {
        return Err(Error::Integrity("file is truncated".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != trailer {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut c = Cursor { bytes: body, at: 12 };
    let hlen = c.u64()? as usize;
    let text = std::str::from_utf8(c.take(hlen)?).map_err(|_| Error::Integrity("header is not UTF-8".into()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
    let count = c.u64()? as usize;
    let raw = c.take(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Integrity("bad value count".into()))?,
    )?;
    if c.at != body.len() {
        return Err(Error::Integrity("trailing bytes after payload".into()));
    }
    let mut values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));

    let mut model = if header.selective {
        SelectiveNet::build(&header.architecture, 0)?
    } else {
        SelectiveNet::baseline(&header.architecture, 0)?
    };
    let params = model.parameters_mut();
    if params.len() != header.tensors.len() {
        return Err(Error::Integrity(format!(
            "architecture declares {} tensors, header lists {}",
            params.len(),
            header.tensors.len()
        )));
    }
    for (i, entry) in header.tensors.iter().enumerate() {
        let id = selnet_core::layers::ParamId(i);
        if params.name(id) != entry.name || params.get(id).shape() != entry.shape.as_slice() {
            return Err(Error::Integrity(format!(
                "tensor {i} ({}) does not match the architecture",
                entry.name
            )));
        }
        let n: usize = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.len() != n {
            return Err(Error::Integrity("payload shorter than declared tensors".into()));
        }
        *params.get_mut(id) = Tensor::new(&entry.shape, data)?;
    }
    let norms = model.batch_norms_mut();
    if norms.len() != header.batch_norm_features.len() {
        return Err(Error::Integrity("batch-norm layer count mismatch".into()));
    }
    for (b, &f) in norms.into_iter().zip(&header.batch_norm_features) {
        if b.features() != f {
            return Err(Error::Integrity("batch-norm width mismatch".into()));
        }
        b.running_mean = values.by_ref().take(f).collect();
        b.running_var = values.by_ref().take(f).collect();
        if b.running_mean.len() != f || b.running_var.len() != f {
            return Err(Error::Integrity("payload shorter than declared statistics".into()));
        }
    }
    if values.next().is_some() {
        return Err(Error::Integrity("payload longer than declared tensors".into()));
    }
    model.set_trained_coverage(header.trained_coverage);
    model.set_calibrated_threshold(header.calibration.map(|c| c.threshold));
    Ok(Checkpoint {
        model,
        calibration: header.calibration,
        preprocessing: header.preprocessing,
        run: header.run,
    })
}

pub fn save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ck)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
