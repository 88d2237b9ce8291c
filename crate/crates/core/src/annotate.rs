//! Weak annotators of controllable accuracy.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{one_hot, Dataset, LabelKind};
use crate::losses::KlDirection;
use crate::nn::{softmax_in_place, Mlp};
use crate::train::{train_mlp, Labeled, Matrix};
use crate::{argmax, seed, Classifier, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    TrainedEarlystop,
    NoiseCorruptor,
    RuleBased,
}

impl AnnotatorKind {
    pub fn tag(self) -> u8 {
        match self {
            AnnotatorKind::TrainedEarlystop => 0,
            AnnotatorKind::NoiseCorruptor => 1,
            AnnotatorKind::RuleBased => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(AnnotatorKind::TrainedEarlystop),
            1 => Some(AnnotatorKind::NoiseCorruptor),
            2 => Some(AnnotatorKind::RuleBased),
            _ => None,
        }
    }
}

/// Per-sample decisions of a noise annotator.
///
/// Inputs not in the table take the decision of their nearest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionTable {
    pub features: Vec<Vec<f32>>,
    pub classes: Vec<usize>,
    pub sharpness: f64,
    index: BTreeMap<Vec<u32>, usize>,
}

impl CorruptionTable {
    pub fn new(features: Vec<Vec<f32>>, classes: Vec<usize>, sharpness: f64) -> Result<Self> {
        if features.len() != classes.len() {
            return Err(Error::LengthMismatch {
                expected: features.len(),
                found: classes.len(),
            });
        }
        if features.is_empty() {
            return Err(Error::EmptyDataset("corruption table".into()));
        }
        let index = features
            .iter()
            .enumerate()
            .map(|(i, x)| (bits(x), i))
            .collect();
        Ok(Self {
            features,
            classes,
            sharpness,
            index,
        })
    }

    pub fn lookup(&self, x: &[f32]) -> usize {
        if let Some(&i) = self.index.get(&bits(x)) {
            return self.classes[i];
        }
        let mut best = (f64::INFINITY, 0);
        for (i, f) in self.features.iter().enumerate() {
            let d: f64 = f
                .iter()
                .zip(x)
                .map(|(a, b)| {
                    let t = f64::from(*a) - f64::from(*b);
                    t * t
                })
                .sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        self.classes[best.1]
    }
}

fn bits(x: &[f32]) -> Vec<u32> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// `sharpness` on `class`, the remainder spread evenly over the others.
pub fn soften(class: usize, num_classes: usize, sharpness: f64) -> Vec<f64> {
    if num_classes == 1 {
        return vec![1.0];
    }
    let rest = (1.0 - sharpness) / (num_classes - 1) as f64;
    let mut v = vec![rest; num_classes];
    v[class] = sharpness;
    v
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnnotatorModel {
    /// Softmax of a small network.
    Network(Mlp),
    Corruption(CorruptionTable),
    /// The same vector for every input.
    Constant(Vec<f64>),
}

/// An opaque labeler `x -> probability vector`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakAnnotator {
    pub kind: AnnotatorKind,
    pub descriptor: String,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Emit the one-hot of the argmax instead of the soft vector.
    pub hard: bool,
    pub model: AnnotatorModel,
}

impl WeakAnnotator {
    pub fn predict(&self, x: &[f32]) -> Vec<f64> {
        let soft = match &self.model {
            AnnotatorModel::Network(mlp) => {
                let xf: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
                let mut out = mlp.forward(&xf, 1);
                softmax_in_place(&mut out);
                out
            }
            AnnotatorModel::Corruption(t) => soften(t.lookup(x), self.num_classes, t.sharpness),
            AnnotatorModel::Constant(v) => v.clone(),
        };
        if self.hard {
            let c = argmax(&soft);
            let mut h = vec![0.0; self.num_classes];
            h[c] = 1.0;
            h
        } else {
            soft
        }
    }

    /// Copy with hard (one-hot) outputs switched on or off.
    pub fn with_hard(mut self, hard: bool) -> Self {
        self.hard = hard;
        self
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.feature_dim() != self.input_dim || ds.num_classes() != self.num_classes {
            return Err(Error::Annotator(format!(
                "annotator `{}` expects {} features and {} classes, dataset `{}` has {} and {}",
                self.descriptor,
                self.input_dim,
                self.num_classes,
                ds.name(),
                ds.feature_dim(),
                ds.num_classes()
            )));
        }
        Ok(())
    }
}

impl Classifier for WeakAnnotator {
    fn output_width(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, x: &[f32]) -> Vec<f64> {
        WeakAnnotator::predict(self, x)
    }
}

/// Annotator that returns the ground-truth one-hot of every sample in `reference`.
pub fn make_perfect_annotator(reference: &Dataset) -> Result<WeakAnnotator> {
    let mut a = make_noise_annotator(reference, 1.0, 1.0, 0)?;
    a.descriptor = String::from("perfect");
    Ok(a)
}

/// Annotator returning the same vector everywhere.
pub fn make_constant_annotator(output: Vec<f64>, input_dim: usize) -> Result<WeakAnnotator> {
    let sum: f64 = output.iter().sum();
    if output.is_empty() || output.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(
            "constant annotator output must be a probability vector".into(),
        ));
    }
    Ok(WeakAnnotator {
        kind: AnnotatorKind::RuleBased,
        descriptor: String::from("constant"),
        num_classes: output.len(),
        input_dim,
        hard: false,
        model: AnnotatorModel::Constant(output),
    })
}

/// Annotator that is correct on exactly `round(target_accuracy * n)` reference
/// samples and picks a uniformly random wrong class on the rest.
pub fn make_noise_annotator(
    reference: &Dataset,
    target_accuracy: f64,
    sharpness: f64,
    seed: u64,
) -> Result<WeakAnnotator> {
    let m = reference.num_classes();
    if reference.label_kind() != LabelKind::GroundTruth {
        return Err(Error::Annotator(
            "noise annotator needs a ground-truth reference".into(),
        ));
    }
    if reference.is_empty() {
        return Err(Error::EmptyDataset(reference.name().into()));
    }
    let chance = 1.0 / m as f64;
    if !(target_accuracy > chance && target_accuracy <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target accuracy {target_accuracy} must lie in (1/M, 1] = ({chance}, 1]"
        )));
    }
    if !(sharpness > chance && sharpness <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sharpness {sharpness} must lie in (1/M, 1]"
        )));
    }
    let n = reference.len();
    let n_correct = libm::round(target_accuracy * n as f64) as usize;
    let mut rng = seed::rng(seed, "annotator/noise");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut classes: Vec<usize> = reference.samples().iter().map(|s| s.class()).collect();
    for &i in &order[n_correct..] {
        let wrong = rng.random_range(0..m - 1);
        classes[i] = if wrong >= classes[i] { wrong + 1 } else { wrong };
    }
    let features = reference.samples().iter().map(|s| s.x.clone()).collect();
    Ok(WeakAnnotator {
        kind: AnnotatorKind::NoiseCorruptor,
        descriptor: format!("noise(acc={target_accuracy}, sharpness={sharpness}, seed={seed})"),
        num_classes: m,
        input_dim: reference.feature_dim(),
        hard: false,
        model: AnnotatorModel::Corruption(CorruptionTable::new(features, classes, sharpness)?),
    })
}

/// Small classifier trained for a fixed, small number of epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            epochs: 1,
            lr: 1e-3,
            batch_size: 32,
        }
    }
}

pub fn make_earlystop_annotator(train: &Dataset, cfg: &EarlyStopConfig, seed: u64) -> Result<WeakAnnotator> {
    let (mlp, _) = train_earlystop(train, cfg, seed, &mut |_| false)?;
    Ok(network_annotator(
        mlp,
        format!("earlystop(epochs={}, seed={seed})", cfg.epochs),
    ))
}

/// Early-stop annotator whose training halts at the first step where its
/// accuracy on `calibration` reaches `target_accuracy`, or after
/// `cfg.epochs` epochs.
pub fn make_calibrated_annotator(
    train: &Dataset,
    calibration: &Dataset,
    cfg: &EarlyStopConfig,
    target_accuracy: f64,
    seed: u64,
) -> Result<WeakAnnotator> {
    if calibration.is_empty() {
        return Err(Error::EmptyDataset(calibration.name().into()));
    }
    if calibration.feature_dim() != train.feature_dim() || calibration.num_classes() != train.num_classes() {
        return Err(Error::Schema("calibration set does not match the training pool".into()));
    }
    let x = Matrix::from_rows(calibration.samples().iter().map(|s| s.x.as_slice()), calibration.feature_dim());
    let truth: Vec<usize> = calibration.samples().iter().map(|s| s.class()).collect();
    let m = train.num_classes();
    let accuracy = |mlp: &Mlp| {
        let out = mlp.forward(&x.data, truth.len());
        let hits = out
            .chunks_exact(m)
            .zip(&truth)
            .filter(|(row, &c)| argmax(row) == c)
            .count();
        hits as f64 / truth.len() as f64
    };
    let (mlp, steps) = train_earlystop(train, cfg, seed, &mut |mlp| accuracy(mlp) >= target_accuracy)?;
    Ok(network_annotator(
        mlp,
        format!("earlystop(target={target_accuracy}, steps={steps}, seed={seed})"),
    ))
}

fn network_annotator(mlp: Mlp, descriptor: String) -> WeakAnnotator {
    WeakAnnotator {
        kind: AnnotatorKind::TrainedEarlystop,
        descriptor,
        num_classes: mlp.out_dim(),
        input_dim: mlp.in_dim(),
        hard: false,
        model: AnnotatorModel::Network(mlp),
    }
}

/// The trained network and the number of optimiser steps taken.
fn train_earlystop(
    train: &Dataset,
    cfg: &EarlyStopConfig,
    seed: u64,
    stop: &mut dyn FnMut(&Mlp) -> bool,
) -> Result<(Mlp, usize)> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("early-stop annotator needs at least one epoch".into()));
    }
    if train.label_kind() != LabelKind::GroundTruth {
        return Err(Error::Annotator(
            "early-stop annotator trains on ground-truth labels".into(),
        ));
    }
    let m = train.num_classes();
    let d = train.feature_dim();
    let mut widths = vec![d];
    widths.extend_from_slice(&cfg.hidden);
    widths.push(m);
    let mut mlp = Mlp::new(&widths, false, &mut seed::rng(seed, "annotator/init"));
    let data = Labeled::new(
        Matrix::from_rows(train.samples().iter().map(|s| s.x.as_slice()), d),
        Matrix::from_rows(train.samples().iter().map(|s| s.y.as_slice()), m),
    );
    let mut steps = 0;
    train_mlp(
        &mut mlp,
        &data,
        cfg.epochs,
        cfg.lr,
        cfg.batch_size,
        KlDirection::TargetToPrediction,
        "annotator",
        &mut seed::rng(seed, "annotator/batches"),
        &mut |mlp: &Mlp| {
            steps += 1;
            stop(mlp)
        },
    )?;
    Ok((mlp, steps))
}

/// Replace every label of `xs` with the annotator's output.
pub fn annotate_dataset(a: &WeakAnnotator, xs: &Dataset) -> Result<Dataset> {
    a.check(xs)?;
    let labels = xs
        .samples()
        .iter()
        .map(|s| a.predict(&s.x).into_iter().map(|v| v as f32).collect())
        .collect();
    xs.relabel(labels, LabelKind::Weak)
}

/// Fraction of samples whose annotator argmax equals the label argmax.
pub fn annotator_accuracy(a: &WeakAnnotator, ds: &Dataset) -> Result<f64> {
    a.check(ds)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset(ds.name().into()));
    }
    let hits = ds
        .samples()
        .iter()
        .filter(|s| argmax(&a.predict(&s.x)) == argmax(&s.y))
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// The one-hot ground truth of a class, as `f64`.
pub fn truth_vector(class: usize, num_classes: usize) -> Vec<f64> {
    one_hot(class, num_classes).into_iter().map(f64::from).collect()
}
