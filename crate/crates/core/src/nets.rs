//! The three-component network: shared extractor `phi0`, prediction head
//! `phi1` (`F1 = phi1 . phi0`) and correction head `phi2`
//! (`F2 = phi2(concat(weak, phi0(x)))`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::{CmmdSpace, KlDirection};
use crate::nn::{softmax_rows, Mlp};
use crate::{seed, Classifier, Error, Result};

/// What the correction head sees besides the features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionInput {
    /// `concat(weak label, phi0(x))`.
    #[default]
    WeakAndFeature,
    /// `phi0(x)` only, for the direct-learning ablation.
    FeatureOnly,
}

/// Layer widths of the triple. Input and class widths come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden widths of `phi0` before the feature layer.
    pub phi0_hidden: Vec<usize>,
    /// Output width `F` of `phi0`.
    pub feature_width: usize,
    /// Hidden widths of `phi1`; with the output layer this gives three layers.
    pub phi1_hidden: Vec<usize>,
    /// Hidden widths of `phi2`; with the output layer this gives two layers.
    pub phi2_hidden: Vec<usize>,
    pub correction_input: CorrectionInput,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            phi0_hidden: vec![32],
            feature_width: 32,
            phi1_hidden: vec![32, 32],
            phi2_hidden: vec![32],
            correction_input: CorrectionInput::WeakAndFeature,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .phi0_hidden
            .iter()
            .chain(&self.phi1_hidden)
            .chain(&self.phi2_hidden);
        if self.feature_width == 0 || widths.clone().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Optimisation settings for every stage and baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Scale of the CMMD term.
    pub alpha: f64,
    /// Stage-1 epochs on the weak-labeled union.
    pub ep1: usize,
    /// Stage-1 epochs on labeled target only.
    pub ep2: usize,
    /// Stage-2 epochs for the correction head.
    pub ep3: usize,
    /// Stage-4 epochs on the relabeled union.
    pub ep4: usize,
    pub lr: f64,
    /// Learning rate for stage 2.
    pub correction_lr: f64,
    pub batch_size: usize,
    /// PAC confidence parameter.
    pub delta: f64,
    /// Prior variance of the hypothesis distribution.
    pub sigma_h2: f64,
    pub seed: u64,
    pub kl_direction: KlDirection,
    pub cmmd_space: CmmdSpace,
    /// One-hot the annotator outputs before use.
    pub hard_weak_labels: bool,
    /// Epochs for the target-only baseline.
    pub bt_epochs: usize,
    /// Epochs on weak-labeled source before fine-tuning baselines.
    pub bf_source_epochs: usize,
    /// Fine-tuning epochs on target.
    pub bf_target_epochs: usize,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk_blobs()
    }
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESETS: [&str; 3] = ["desk-blobs", "paper-digits", "paper-cifar"];

impl TrainConfig {
    pub fn desk_blobs() -> Self {
        Self {
            alpha: 1e-4,
            ep1: 20,
            ep2: 10,
            ep3: 100,
            ep4: 30,
            lr: 1e-3,
            correction_lr: 3e-3,
            batch_size: 32,
            delta: 0.05,
            sigma_h2: 1.0,
            seed: 0,
            kl_direction: KlDirection::PredictionToTarget,
            cmmd_space: CmmdSpace::Output,
            hard_weak_labels: false,
            bt_epochs: 100,
            bf_source_epochs: 20,
            bf_target_epochs: 30,
            arch: ArchConfig::default(),
        }
    }

    pub fn paper_digits() -> Self {
        Self {
            ep1: 90,
            ep2: 90,
            ep3: 40,
            ep4: 180,
            lr: 1e-5,
            correction_lr: 1e-5,
            batch_size: 128,
            bt_epochs: 90,
            bf_source_epochs: 90,
            bf_target_epochs: 90,
            arch: ArchConfig {
                phi1_hidden: vec![128, 64],
                ..ArchConfig::default()
            },
            ..Self::desk_blobs()
        }
    }

    pub fn paper_cifar() -> Self {
        Self {
            ep1: 40,
            ep2: 30,
            ep3: 70,
            ep4: 70,
            lr: 1e-3,
            correction_lr: 1e-3,
            batch_size: 128,
            bt_epochs: 70,
            bf_source_epochs: 30,
            bf_target_epochs: 40,
            arch: ArchConfig {
                phi1_hidden: vec![128, 64],
                ..ArchConfig::default()
            },
            ..Self::desk_blobs()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk-blobs" => Some(Self::desk_blobs()),
            "paper-digits" => Some(Self::paper_digits()),
            "paper-cifar" => Some(Self::paper_cifar()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.correction_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config("delta must lie in (0, 1]".into()));
        }
        if !(self.sigma_h2 > 0.0) {
            return Err(Error::Config("sigma_h2 must be positive".into()));
        }
        self.arch.validate()
    }
}

/// One of the three trainable components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Phi0,
    Phi1,
    Phi2,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Phi0, Component::Phi1, Component::Phi2];

    pub fn name(self) -> &'static str {
        match self {
            Component::Phi0 => "phi0",
            Component::Phi1 => "phi1",
            Component::Phi2 => "phi2",
        }
    }
}

/// A named parameter tensor, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelTriple {
    pub arch: ArchConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
    pub phi0: Mlp,
    pub phi1: Mlp,
    pub phi2: Mlp,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl ModelTriple {
    pub fn new(arch: ArchConfig, input_dim: usize, num_classes: usize, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Config("input and class widths must be positive".into()));
        }
        let f = arch.feature_width;
        let phi2_in = match arch.correction_input {
            CorrectionInput::WeakAndFeature => num_classes + f,
            CorrectionInput::FeatureOnly => f,
        };
        let phi0 = Mlp::new(
            &widths(input_dim, &arch.phi0_hidden, f),
            true,
            &mut seed::rng(init_seed, "init/phi0"),
        );
        let phi1 = Mlp::new(
            &widths(f, &arch.phi1_hidden, num_classes),
            false,
            &mut seed::rng(init_seed, "init/phi1"),
        );
        let phi2 = Mlp::new(
            &widths(phi2_in, &arch.phi2_hidden, num_classes),
            false,
            &mut seed::rng(init_seed, "init/phi2"),
        );
        Ok(Self {
            arch,
            input_dim,
            num_classes,
            init_seed,
            phi0,
            phi1,
            phi2,
        })
    }

    /// Fresh parameters for all three components from `seed`.
    pub fn reinitialize(&self, seed: u64) -> Self {
        Self::new(self.arch.clone(), self.input_dim, self.num_classes, seed)
            .expect("architecture was validated at construction")
    }

    /// Same shapes, every parameter zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.phi0.set_zero();
        m.phi1.set_zero();
        m.phi2.set_zero();
        m
    }

    pub fn feature_width(&self) -> usize {
        self.arch.feature_width
    }

    pub fn takes_weak_label(&self) -> bool {
        self.arch.correction_input == CorrectionInput::WeakAndFeature
    }

    pub fn component(&self, c: Component) -> &Mlp {
        match c {
            Component::Phi0 => &self.phi0,
            Component::Phi1 => &self.phi1,
            Component::Phi2 => &self.phi2,
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut Mlp {
        match c {
            Component::Phi0 => &mut self.phi0,
            Component::Phi1 => &mut self.phi1,
            Component::Phi2 => &mut self.phi2,
        }
    }

    pub fn num_params(&self) -> usize {
        Component::ALL.iter().map(|&c| self.component(c).num_params()).sum()
    }

    /// `phi1(phi0(x))` logits for a row-major batch.
    pub fn f1_logits(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let feat = self.phi0.forward(x, batch);
        self.phi1.forward(&feat, batch)
    }

    /// Softmax outputs of `F1` for a row-major batch.
    pub fn f1_forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        softmax_rows(&self.f1_logits(x, batch), self.num_classes)
    }

    /// `F1(x)` as a probability vector.
    pub fn f1_forward(&self, x: &[f32]) -> Vec<f64> {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        self.f1_forward_batch(&x, 1)
    }

    /// Input rows of `phi2` for a batch: weak labels then features.
    pub fn phi2_input(&self, weak: &[f64], feat: &[f64], batch: usize) -> Vec<f64> {
        let f = self.feature_width();
        if !self.takes_weak_label() {
            return feat.to_vec();
        }
        let m = self.num_classes;
        let mut out = Vec::with_capacity(batch * (m + f));
        for r in 0..batch {
            out.extend_from_slice(&weak[r * m..(r + 1) * m]);
            out.extend_from_slice(&feat[r * f..(r + 1) * f]);
        }
        out
    }

    /// Raw `phi2` output for a batch; `weak` is ignored for feature-only heads.
    pub fn f2_forward_batch(&self, x: &[f64], weak: &[f64], batch: usize) -> Vec<f64> {
        let feat = self.phi0.forward(x, batch);
        self.phi2.forward(&self.phi2_input(weak, &feat, batch), batch)
    }

    /// Unconstrained correction vector `phi2(concat(yw, phi0(x)))`.
    pub fn f2_forward(&self, x: &[f32], yw: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        if self.takes_weak_label() && yw.len() != self.num_classes {
            return Err(Error::LengthMismatch {
                expected: self.num_classes,
                found: yw.len(),
            });
        }
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        Ok(self.f2_forward_batch(&x, yw, 1))
    }

    /// Every parameter as a named tensor, `<component>.<layer>.{weight,bias}`.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for c in Component::ALL {
            for (i, layer) in self.component(c).layers.iter().enumerate() {
                out.push(NamedTensor {
                    name: format!("{}.{i}.weight", c.name()),
                    shape: vec![layer.out_dim, layer.in_dim],
                    data: layer.weight.clone(),
                });
                out.push(NamedTensor {
                    name: format!("{}.{i}.bias", c.name()),
                    shape: vec![layer.out_dim],
                    data: layer.bias.clone(),
                });
            }
        }
        out
    }

    /// Overwrite parameters from tensors produced by [`ModelTriple::named_tensors`].
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::Schema(format!(
                "checkpoint holds {} tensors, model needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(tensors) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Schema(format!(
                    "checkpoint tensor `{}` {:?} does not match `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        let mut it = tensors.iter();
        for c in Component::ALL {
            for layer in &mut self.component_mut(c).layers {
                layer.weight.copy_from_slice(&it.next().expect("checked").data);
                layer.bias.copy_from_slice(&it.next().expect("checked").data);
            }
        }
        Ok(())
    }

    pub fn f1(&self) -> F1<'_> {
        F1(self)
    }
}

/// `F1` viewed as a [`Classifier`].
#[derive(Clone, Copy)]
pub struct F1<'a>(pub &'a ModelTriple);

impl Classifier for F1<'_> {
    fn output_width(&self) -> usize {
        self.0.num_classes
    }

    fn predict(&self, x: &[f32]) -> Vec<f64> {
        self.0.f1_forward(x)
    }
}

/// Convert `f32` feature rows of a batch to a flat `f64` matrix.
pub fn rows_f64<'a>(rows: impl IntoIterator<Item = &'a [f32]>) -> Vec<f64> {
    rows.into_iter()
        .flat_map(|r| r.iter().map(|&v| f64::from(v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelTriple {
        ModelTriple::new(ArchConfig::default(), 4, 3, 7).unwrap()
    }

    #[test]
    fn widths_line_up() {
        let m = model();
        assert_eq!(m.phi0.out_dim(), m.phi1.in_dim());
        assert_eq!(m.phi2.in_dim(), 32 + 3);
        assert_eq!(m.phi1.layers.len(), 3);
        assert_eq!(m.phi2.layers.len(), 2);
        let fo = ModelTriple::new(
            ArchConfig {
                correction_input: CorrectionInput::FeatureOnly,
                ..ArchConfig::default()
            },
            4,
            3,
            7,
        )
        .unwrap();
        assert_eq!(fo.phi2.in_dim(), 32);
    }

    #[test]
    fn zero_network_outputs() {
        let z = model().zeroed();
        let p = z.f1_forward(&[1.0, -2.0, 0.5, 3.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = z.f2_forward(&[1.0, -2.0, 0.5, 3.0], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("nope").is_none());
        let bad = TrainConfig {
            alpha: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reinitialize_is_seeded() {
        let m = model();
        assert_eq!(m.reinitialize(3), m.reinitialize(3));
        assert_ne!(m.reinitialize(3), m.reinitialize(4));
    }

    #[test]
    fn named_tensors_round_trip() {
        let a = model();
        let mut b = a.reinitialize(99);
        b.load_named_tensors(&a.named_tensors()).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        assert!(b.load_named_tensors(&a.named_tensors()[1..]).is_err());
    }
}
