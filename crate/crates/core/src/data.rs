//! In-memory datasets, standardization, splitting and the synthetic
//! selective-classification generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::loss::Labels;
use crate::math;
use crate::model::Task;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_labels(&self) -> Labels<'_> {
        match self {
            Targets::Classes { labels, .. } => Labels::Classes(labels),
            Targets::Values(v) => Labels::Values(v),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes { classes, .. } => Task::Classification { classes: *classes },
            Targets::Values(_) => Task::Regression,
        }
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Per-feature z-score statistics fitted on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    /// Indices of the input columns that are kept.
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub input_width: usize,
}

impl FeatureStats {
    /// Population mean and standard deviation; zero-variance columns are dropped.
    pub fn fit(features: &Tensor) -> Result<(Self, Vec<String>)> {
        let (m, d) = (features.rows(), features.cols());
        if m == 0 {
            bail!(Data, "cannot fit statistics on an empty set");
        }
        let mut out = Self {
            kept: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            input_width: d,
        };
        let mut warnings = Vec::new();
        for j in 0..d {
            let col = (0..m).map(|i| features.data()[i * d + j]);
            let mean = col.clone().sum::<f64>() / m as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let std = math::sqrt(var);
            if std > 0.0 {
                out.kept.push(j);
                out.mean.push(mean);
                out.std.push(std);
            } else {
                warnings.push(format!("feature {j} has zero variance and was dropped"));
            }
        }
        if out.kept.is_empty() {
            bail!(Data, "every feature has zero variance");
        }
        Ok((out, warnings))
    }

    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let (m, d) = (features.rows(), features.cols());
        if d != self.input_width {
            return Err(crate::Error::Dimension {
                op: "standardize",
                left: vec![m, d],
                right: vec![self.input_width],
            });
        }
        let w = self.kept.len();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            let row = features.row(i);
            for (k, &j) in self.kept.iter().enumerate() {
                data.push((row[j] - self.mean[k]) / self.std[k]);
            }
        }
        Tensor::matrix(m, w, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            bail!(Data, "cannot fit target statistics on an empty set");
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        if !(std > 0.0) {
            bail!(Data, "regression target is constant");
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub warnings: Vec<String>,
    /// Generator noise membership, for diagnostics only.
    pub noise: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Targets,
    pub feature_names: Vec<String>,
    pub feature_stats: Option<FeatureStats>,
    pub target_stats: Option<TargetStats>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets, provenance: Provenance) -> Result<Self> {
        if features.rank() != 2 {
            bail!(Data, "features must be a matrix, got shape {:?}", features.shape());
        }
        if features.rows() == 0 {
            bail!(Data, "dataset is empty");
        }
        if features.rows() != targets.len() {
            bail!(Data, "{} feature rows but {} targets", features.rows(), targets.len());
        }
        if !features.all_finite() {
            bail!(Data, "features contain non-finite values");
        }
        match &targets {
            Targets::Values(v) if v.iter().any(|x| !x.is_finite()) => bail!(Data, "targets contain non-finite values"),
            Targets::Classes { labels, classes } => {
                if *classes < 2 {
                    bail!(Data, "classification needs at least 2 classes");
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    bail!(Data, "label {bad} out of range for {classes} classes");
                }
            }
            _ => {}
        }
        let feature_names = (0..features.cols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            features,
            targets,
            feature_names,
            feature_stats: None,
            target_stats: None,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }

    pub fn labels(&self) -> Labels<'_> {
        self.targets.as_labels()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            targets: self.targets.select(idx),
            feature_names: self.feature_names.clone(),
            feature_stats: self.feature_stats.clone(),
            target_stats: self.target_stats,
            provenance: Provenance {
                source: self.provenance.source.clone(),
                warnings: self.provenance.warnings.clone(),
                noise: self
                    .provenance
                    .noise
                    .as_ref()
                    .map(|n| idx.iter().map(|&i| n[i]).collect()),
            },
        }
    }

    /// Z-score the features with `stats`, or with statistics fitted on this set.
    pub fn standardize(&self, stats: Option<&FeatureStats>) -> Result<Self> {
        let mut warnings = Vec::new();
        let stats = match stats {
            Some(s) => s.clone(),
            None => {
                let (s, w) = FeatureStats::fit(&self.features)?;
                warnings = w;
                s
            }
        };
        let mut out = self.clone();
        out.features = stats.apply(&self.features)?;
        out.feature_names = stats.kept.iter().map(|&j| self.feature_names[j].clone()).collect();
        out.provenance.warnings.extend(warnings);
        out.feature_stats = Some(stats);
        Ok(out)
    }

    /// Z-score regression targets; the stored stats map predictions back.
    pub fn standardize_targets(&self, stats: Option<&TargetStats>) -> Result<Self> {
        let Targets::Values(v) = &self.targets else {
            bail!(Contract, "only regression targets can be standardized");
        };
        let stats = match stats {
            Some(s) => *s,
            None => TargetStats::fit(v)?,
        };
        let mut out = self.clone();
        out.targets = Targets::Values(v.iter().map(|&y| stats.apply(y)).collect());
        out.target_stats = Some(stats);
        Ok(out)
    }

    /// Targets in original units.
    pub fn raw_targets(&self) -> Targets {
        match (&self.targets, &self.target_stats) {
            (Targets::Values(v), Some(s)) => Targets::Values(v.iter().map(|&z| s.invert(z)).collect()),
            (t, _) => t.clone(),
        }
    }

    pub fn split(&self, spec: &SplitSpec) -> Result<(Self, Self, Self)> {
        let parts = split_indices(self, spec)?;
        Ok((self.subset(&parts[0]), self.subset(&parts[1]), self.subset(&parts[2])))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, calibration and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(fractions: [f64; 3], seed: u64) -> Self {
        Self {
            fractions,
            seed,
            stratified: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|&f| !(f > 0.0)) {
            bail!(Config, "split fractions must be positive, got {:?}", self.fractions);
        }
        let s: f64 = self.fractions.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            bail!(Config, "split fractions sum to {s}, not 1");
        }
        Ok(())
    }
}

/// Floor each share, then hand the remainder out by largest fractional part
/// (earlier parts win ties).
pub fn allocate(m: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * m as f64).collect();
    let mut sizes: Vec<usize> = raw
        .iter()
        .map(|&x| {
            let r = math::round(x);
            if (x - r).abs() <= 1e-9 * x.max(1.0) {
                r as usize
            } else {
                math::floor(x) as usize
            }
        })
        .collect();
    let mut rest = m.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - sizes[a] as f64;
        let fb = raw[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Disjoint train/calibration/test index sets covering `0..m`.
pub fn split_indices(data: &Dataset, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let m = data.len();
    let mut rng = rng::stream(spec.seed, Stream::Split);
    let mut parts: [Vec<usize>; 3] = Default::default();
    match (&data.targets, spec.stratified) {
        (Targets::Classes { labels, classes }, true) => {
            for c in 0..*classes {
                let mut idx: Vec<usize> = (0..m).filter(|&i| labels[i] == c).collect();
                idx.shuffle(&mut rng);
                let sizes = allocate(idx.len(), &spec.fractions);
                let mut start = 0;
                for (p, &s) in parts.iter_mut().zip(&sizes) {
                    p.extend_from_slice(&idx[start..start + s]);
                    start += s;
                }
            }
            for p in &mut parts {
                p.shuffle(&mut rng);
            }
        }
        (Targets::Values(_), true) => bail!(Config, "stratified splits need class labels"),
        _ => {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng);
            let sizes = allocate(m, &spec.fractions);
            let mut start = 0;
            for (p, &s) in parts.iter_mut().zip(&sizes) {
                p.extend_from_slice(&idx[start..start + s]);
                start += s;
            }
        }
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        bail!(
            Config,
            "split {i} would be empty for {m} samples and fractions {:?}",
            spec.fractions
        );
    }
    Ok(parts)
}

/// Gaussian clusters plus a shared overlap region with random labels.
///
/// Clean samples of class `j` are drawn from `N(R·e_j, σ²I)`; noise samples
/// from `N(μ̄, σ_n²I)` where `μ̄` is the mean of the class centres, with a
/// uniformly random label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub noise_fraction: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_cluster_std")]
    pub cluster_std: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
}

fn default_radius() -> f64 {
    4.0
}
fn default_cluster_std() -> f64 {
    1.0
}
fn default_noise_std() -> f64 {
    0.7
}

impl SynthSpec {
    pub fn new(seed: u64, samples: usize, classes: usize, dim: usize, noise_fraction: f64) -> Self {
        Self {
            seed,
            samples,
            classes,
            dim,
            noise_fraction,
            radius: default_radius(),
            cluster_std: default_cluster_std(),
            noise_std: default_noise_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            bail!(Config, "need at least 2 classes, got {}", self.classes);
        }
        if self.dim < self.classes {
            bail!(
                Config,
                "dimension {} is smaller than the class count {}",
                self.dim,
                self.classes
            );
        }
        if !(0.0..0.5).contains(&self.noise_fraction) {
            bail!(
                Config,
                "noise fraction must lie in [0, 0.5), got {}",
                self.noise_fraction
            );
        }
        if self.samples == 0 {
            bail!(Config, "sample count must be positive");
        }
        if !(self.radius > 0.0 && self.cluster_std > 0.0 && self.noise_std > 0.0) {
            bail!(Config, "radius and standard deviations must be positive");
        }
        Ok(())
    }

    fn centre(&self, class: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        c[class] = self.radius;
        c
    }

    fn noise_centre(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for v in c.iter_mut().take(self.classes) {
            *v = self.radius / self.classes as f64;
        }
        c
    }

    pub fn noise_count(&self) -> usize {
        math::round(self.noise_fraction * self.samples as f64) as usize
    }

    /// Generator posteriors at `x`: `(P(y | x), P(noise | x))`.
    pub fn posterior(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let log_gauss = |centre: &[f64], s: f64| {
            let d2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
            -d2 / (2.0 * s * s) - self.dim as f64 * math::ln(s)
        };
        let k = self.classes as f64;
        let eta = self.noise_fraction;
        let mut logs: Vec<f64> = (0..self.classes)
            .map(|j| math::ln((1.0 - eta) / k) + log_gauss(&self.centre(j), self.cluster_std))
            .collect();
        let noise_log = if eta > 0.0 {
            math::ln(eta) + log_gauss(&self.noise_centre(), self.noise_std)
        } else {
            f64::NEG_INFINITY
        };
        logs.push(noise_log);
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|&l| math::exp(l - top)).collect();
        let z: f64 = w.iter().sum();
        let noise = w[self.classes] / z;
        let post = (0..self.classes).map(|j| (w[j] + w[self.classes] / k) / z).collect();
        (post, noise)
    }
}

pub fn synth_classification(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Data);
    let m = spec.samples;
    let mut noise = vec![false; m];
    for n in noise.iter_mut().take(spec.noise_count()) {
        *n = true;
    }
    noise.shuffle(&mut rng);
    let noise_centre = spec.noise_centre();
    let mut data = Vec::with_capacity(m * spec.dim);
    let mut labels = Vec::with_capacity(m);
    for &is_noise in &noise {
        let label = rng.random_range(0..spec.classes);
        let (centre, s) = if is_noise {
            (noise_centre.clone(), spec.noise_std)
        } else {
            (spec.centre(label), spec.cluster_std)
        };
        for c in centre {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(c + s * z);
        }
        labels.push(label);
    }
    Dataset::new(
        Tensor::matrix(m, spec.dim, data)?,
        Targets::Classes {
            labels,
            classes: spec.classes,
        },
        Provenance {
            source: format!(
                "synthetic: seed={} samples={} classes={} dim={} noise={} radius={} cluster_std={} noise_std={}",
                spec.seed,
                spec.samples,
                spec.classes,
                spec.dim,
                spec.noise_fraction,
                spec.radius,
                spec.cluster_std,
                spec.noise_std
            ),
            warnings: Vec::new(),
            noise: Some(noise),
        },
    )
}
