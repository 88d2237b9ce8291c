//! Source/target datasets: construction, shifting, splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{argmax, seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

/// What the label vectors of a dataset mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// One-hot ground truth.
    GroundTruth,
    /// Annotator probability vectors.
    Weak,
    /// Weak label plus learned correction; may leave the simplex.
    Relabeled,
}

impl LabelKind {
    pub fn tag(self) -> u8 {
        match self {
            LabelKind::GroundTruth => 0,
            LabelKind::Weak => 1,
            LabelKind::Relabeled => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LabelKind::GroundTruth),
            1 => Some(LabelKind::Weak),
            2 => Some(LabelKind::Relabeled),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub domain: Domain,
}

impl Sample {
    /// Class index of the label vector (lowest index on ties).
    pub fn class(&self) -> usize {
        argmax(&self.y)
    }
}

impl AsRef<[f32]> for Sample {
    fn as_ref(&self) -> &[f32] {
        &self.x
    }
}

/// One-hot label vector of length `num_classes`.
pub fn one_hot(class: usize, num_classes: usize) -> Vec<f32> {
    let mut y = vec![0.0; num_classes];
    y[class] = 1.0;
    y
}

/// A bag of samples sharing a class count and feature shape.
///
/// Datasets may be empty (an unused validation split); operations that need
/// samples report [`Error::EmptyDataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    shape: Vec<usize>,
    label_kind: LabelKind,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        shape: Vec<usize>,
        label_kind: LabelKind,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        let name = name.into();
        if num_classes == 0 {
            return Err(Error::Schema(format!("dataset `{name}`: zero classes")));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Schema(format!(
                "dataset `{name}`: invalid feature shape {shape:?}"
            )));
        }
        let dim: usize = shape.iter().product();
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::Schema(format!(
                    "dataset `{name}`: sample {i} has {} features, shape needs {dim}",
                    s.x.len()
                )));
            }
            if s.y.len() != num_classes {
                return Err(Error::Schema(format!(
                    "dataset `{name}`: sample {i} has label length {}, expected {num_classes}",
                    s.y.len()
                )));
            }
            if label_kind == LabelKind::GroundTruth && !is_one_hot(&s.y) {
                return Err(Error::Schema(format!(
                    "dataset `{name}`: sample {i} is tagged ground truth but not one-hot"
                )));
            }
        }
        Ok(Self {
            name,
            num_classes,
            shape,
            label_kind,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn feature_dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Same features and domains with new label vectors.
    pub fn relabel(&self, labels: Vec<Vec<f32>>, kind: LabelKind) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, y)| Sample {
                x: s.x.clone(),
                y,
                domain: s.domain,
            })
            .collect();
        Dataset::new(
            self.name.clone(),
            self.num_classes,
            self.shape.clone(),
            kind,
            samples,
        )
    }

    /// Concatenation of two datasets with the same class count and shape.
    pub fn concat(&self, other: &Dataset, name: impl Into<String>) -> Result<Dataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::Schema(format!(
                "cannot join datasets with {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        if self.shape != other.shape {
            return Err(Error::Schema("cannot join datasets of different shapes".into()));
        }
        let kind = if self.label_kind == other.label_kind {
            self.label_kind
        } else {
            LabelKind::Relabeled
        };
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Dataset::new(name, self.num_classes, self.shape.clone(), kind, samples)
    }

    /// Subset by sample index, in the given order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(
            name,
            self.num_classes,
            self.shape.clone(),
            self.label_kind,
            samples,
        )
    }

    /// Number of samples per class (argmax of the label vector).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.class()] += 1;
        }
        counts
    }
}

fn is_one_hot(y: &[f32]) -> bool {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    ones == 1 && zeros == y.len() - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Rotate consecutive coordinate pairs by `magnitude` radians.
    Rotation,
    /// Translate by a fixed vector of length `magnitude`.
    MeanOffset,
    /// Add isotropic Gaussian noise with standard deviation `magnitude`.
    GaussianNoise,
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(ShiftKind::Rotation),
            "mean_offset" => Ok(ShiftKind::MeanOffset),
            "gaussian_noise" => Ok(ShiftKind::GaussianNoise),
            other => Err(Error::Config(format!(
                "unknown shift kind `{other}` (expected rotation, mean_offset or gaussian_noise)"
            ))),
        }
    }
}

/// Gaussian-blob domain pair generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_count: usize,
    /// Blobs per class; more than one makes class regions non-convex.
    pub clusters_per_class: usize,
    /// Expected norm of a blob center.
    pub separation: f64,
    /// Per-coordinate standard deviation inside a blob.
    pub spread: f64,
    pub shift_kind: ShiftKind,
    pub shift_magnitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            per_class_count: 600,
            clusters_per_class: 2,
            separation: 5.0,
            spread: 1.0,
            shift_kind: ShiftKind::Rotation,
            shift_magnitude: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if self.per_class_count < 1 {
            return Err(Error::Config("per_class_count must be at least 1".into()));
        }
        if self.clusters_per_class < 1 {
            return Err(Error::Config("clusters_per_class must be at least 1".into()));
        }
        if !(self.spread >= 0.0 && self.separation >= 0.0 && self.shift_magnitude >= 0.0) {
            return Err(Error::Config(
                "separation, spread and shift_magnitude must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Analytic parameters of the generator behind [`synth_domain_pair`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthModel {
    pub config: SynthConfig,
    /// Blob centers, indexed `[class][cluster][coordinate]`.
    pub centers: Vec<Vec<Vec<f64>>>,
    /// Translation applied to target samples (zero unless mean offset).
    pub offset: Vec<f64>,
}

impl SynthModel {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(cfg.seed, "synth/centers");
        let scale = cfg.separation / libm::sqrt(cfg.dim as f64);
        let centers = (0..cfg.num_classes)
            .map(|_| {
                (0..cfg.clusters_per_class)
                    .map(|_| {
                        (0..cfg.dim)
                            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let offset = match cfg.shift_kind {
            ShiftKind::MeanOffset => {
                let mut rng = seed::rng(cfg.seed, "synth/offset");
                let dir: Vec<f64> = (0..cfg.dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
                dir.iter().map(|v| cfg.shift_magnitude * v / norm).collect()
            }
            _ => vec![0.0; cfg.dim],
        };
        Ok(Self {
            config: cfg.clone(),
            centers,
            offset,
        })
    }

    /// Class means in the source domain (average over the class's blobs).
    pub fn source_class_means(&self) -> Vec<Vec<f64>> {
        self.centers
            .iter()
            .map(|clusters| {
                let mut mean = vec![0.0; self.config.dim];
                for c in clusters {
                    for (m, v) in mean.iter_mut().zip(c) {
                        *m += v / clusters.len() as f64;
                    }
                }
                mean
            })
            .collect()
    }

    /// Class means in the target domain.
    pub fn target_class_means(&self) -> Vec<Vec<f64>> {
        self.source_class_means()
            .into_iter()
            .map(|m| {
                let mut m = self.transform_point(&m);
                for (v, o) in m.iter_mut().zip(&self.offset) {
                    *v += o;
                }
                m
            })
            .collect()
    }

    /// The deterministic (linear) part of the target transform.
    fn transform_point(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        if self.config.shift_kind == ShiftKind::Rotation {
            let (s, c) = (
                libm::sin(self.config.shift_magnitude),
                libm::cos(self.config.shift_magnitude),
            );
            for pair in out.chunks_exact_mut(2) {
                let (a, b) = (pair[0], pair[1]);
                pair[0] = c * a - s * b;
                pair[1] = s * a + c * b;
            }
        }
        out
    }

    /// A fresh ground-truth dataset of `per_class_count` samples per class,
    /// independent of the pair drawn by [`synth_domain_pair`] for distinct tags.
    pub fn sample(&self, domain: Domain, per_class_count: usize, tag: &str) -> Result<Dataset> {
        if per_class_count == 0 {
            return Err(Error::InvalidArgument("per_class_count must be at least 1".into()));
        }
        let samples = self.draw(domain, per_class_count, &mut seed::rng(self.config.seed, tag));
        let name = match domain {
            Domain::Source => "source",
            Domain::Target => "target",
        };
        Dataset::new(
            name,
            self.config.num_classes,
            vec![self.config.dim],
            LabelKind::GroundTruth,
            samples,
        )
    }

    fn draw(&self, domain: Domain, per_class_count: usize, rng: &mut impl Rng) -> Vec<Sample> {
        let cfg = &self.config;
        let noise = Normal::new(0.0, cfg.shift_magnitude).expect("validated magnitude");
        let mut samples = Vec::with_capacity(cfg.num_classes * per_class_count);
        for (class, clusters) in self.centers.iter().enumerate() {
            for i in 0..per_class_count {
                let center = &clusters[i % clusters.len()];
                let mut x: Vec<f64> = center
                    .iter()
                    .map(|c| c + cfg.spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if domain == Domain::Target {
                    x = self.transform_point(&x);
                    match cfg.shift_kind {
                        ShiftKind::MeanOffset => {
                            for (v, o) in x.iter_mut().zip(&self.offset) {
                                *v += o;
                            }
                        }
                        ShiftKind::GaussianNoise => {
                            for v in x.iter_mut() {
                                *v += noise.sample(rng);
                            }
                        }
                        ShiftKind::Rotation => {}
                    }
                }
                samples.push(Sample {
                    x: x.into_iter().map(|v| v as f32).collect(),
                    y: one_hot(class, cfg.num_classes),
                    domain,
                });
            }
        }
        samples.shuffle(rng);
        samples
    }
}

/// Draw a (source, target) pair of ground-truth datasets.
///
/// Both domains share class semantics; the target is the source generative
/// process pushed through the configured shift.
pub fn synth_domain_pair(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    let model = SynthModel::new(cfg)?;
    Ok((
        model.sample(Domain::Source, cfg.per_class_count, "synth/source")?,
        model.sample(Domain::Target, cfg.per_class_count, "synth/target")?,
    ))
}

/// Copy of `ds` with i.i.d. `N(noise_mean, noise_sigma^2)` added to every
/// feature entry. Labels, domains and order are unchanged.
pub fn shift_domain(ds: &Dataset, noise_mean: f64, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let normal = Normal::new(noise_mean, noise_sigma).map_err(|_| {
        Error::InvalidArgument(format!(
            "noise sigma must be finite and non-negative, got {noise_sigma}"
        ))
    })?;
    let mut rng = seed::rng(seed, "shift_domain");
    let samples = ds
        .samples
        .iter()
        .map(|s| Sample {
            x: s
                .x
                .iter()
                .map(|&v| (f64::from(v) + normal.sample(&mut rng)) as f32)
                .collect(),
            y: s.y.clone(),
            domain: s.domain,
        })
        .collect();
    Dataset::new(
        ds.name.clone(),
        ds.num_classes,
        ds.shape.clone(),
        ds.label_kind,
        samples,
    )
}

/// The three disjoint splits one experiment runs on.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub source: Dataset,
    pub target: Dataset,
    pub validation: Dataset,
}

impl ExperimentData {
    pub fn num_classes(&self) -> usize {
        self.source.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.source.feature_dim()
    }
}

/// Draw `n_source` samples from `source`, and `n_validation` then `n_target`
/// samples from `target`, without replacement.
///
/// Validation is drawn first so that, for a fixed seed, growing `n_target`
/// keeps the validation set fixed and extends the target set.
pub fn sample_splits(
    source: &Dataset,
    target: &Dataset,
    n_source: usize,
    n_target: usize,
    n_validation: usize,
    seed: u64,
) -> Result<ExperimentData> {
    if n_source > source.len() {
        return Err(Error::Split {
            dataset: source.name.clone(),
            requested: n_source,
            available: source.len(),
        });
    }
    if n_target + n_validation > target.len() {
        return Err(Error::Split {
            dataset: target.name.clone(),
            requested: n_target + n_validation,
            available: target.len(),
        });
    }
    if source.num_classes != target.num_classes || source.shape != target.shape {
        return Err(Error::Schema(
            "source and target disagree on class count or shape".into(),
        ));
    }
    if n_target >= n_source {
        log::warn!(
            "target split ({n_target}) is not smaller than source split ({n_source})"
        );
    }
    let mut src_idx: Vec<usize> = (0..source.len()).collect();
    src_idx.shuffle(&mut seed::rng(seed, "splits/source"));
    let mut tgt_idx: Vec<usize> = (0..target.len()).collect();
    tgt_idx.shuffle(&mut seed::rng(seed, "splits/target"));

    Ok(ExperimentData {
        source: source.select(&src_idx[..n_source], "source")?,
        validation: target.select(&tgt_idx[..n_validation], "validation")?,
        target: target.select(&tgt_idx[n_validation..n_validation + n_target], "target")?,
    })
}

/// Index sets behind [`sample_splits`]: (source, target, validation).
pub fn split_indices(
    n_source_total: usize,
    n_target_total: usize,
    n_source: usize,
    n_target: usize,
    n_validation: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut src_idx: Vec<usize> = (0..n_source_total).collect();
    src_idx.shuffle(&mut seed::rng(seed, "splits/source"));
    let mut tgt_idx: Vec<usize> = (0..n_target_total).collect();
    tgt_idx.shuffle(&mut seed::rng(seed, "splits/target"));
    src_idx.truncate(n_source);
    let target = tgt_idx[n_validation..n_validation + n_target].to_vec();
    tgt_idx.truncate(n_validation);
    (src_idx, target, tgt_idx)
}

impl core::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            ShiftKind::Rotation => "rotation",
            ShiftKind::MeanOffset => "mean_offset",
            ShiftKind::GaussianNoise => "gaussian_noise",
        };
        f.write_str(s)
    }
}

impl Sample {
    pub fn new(x: Vec<f32>, y: Vec<f32>, domain: Domain) -> Self {
        Self { x, y, domain }
    }
}
