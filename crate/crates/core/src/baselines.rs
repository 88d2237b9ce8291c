//! Comparison methods, wired with the same splits and seeds as the pipeline.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_dataset, WeakAnnotator};
use crate::data::{Dataset, ExperimentData, LabelKind};
use crate::nets::{rows_f64, CorrectionInput, ModelTriple, TrainConfig};
use crate::nn::softmax_rows;
use crate::pipeline::{
    effective_annotator, evaluate, f1_options, initial_model_seed, labeled, stage1_train, stage4_model_seed,
    stage4_train, weak_union, Evaluation,
};
use crate::train::{train_correction, train_f1, CorrectionObjective, CorrectionOptions, F1Schedule, Matrix};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wal,
    Bwa,
    Bt,
    Bf1,
    Bf2,
    Bdirect,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Wal,
        Method::Bwa,
        Method::Bt,
        Method::Bf1,
        Method::Bf2,
        Method::Bdirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wal => "wal",
            Method::Bwa => "bwa",
            Method::Bt => "bt",
            Method::Bf1 => "bf1",
            Method::Bf2 => "bf2",
            Method::Bdirect => "bdirect",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub name: Method,
    pub accuracy: f64,
    #[serde(with = "crate::nan_serde::vec")]
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

impl BaselineResult {
    fn new(name: Method, eval: Evaluation, seed: u64, config: Option<TrainConfig>) -> Self {
        Self {
            name,
            accuracy: eval.accuracy,
            per_class_accuracy: eval.per_class,
            class_counts: eval.class_counts,
            seed,
            config,
        }
    }
}

/// A trained baseline and its result.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub result: BaselineResult,
    pub model: ModelTriple,
}

/// The weak annotator's own accuracy on `validation`.
pub fn run_bwa(annotator: &WeakAnnotator, validation: &Dataset) -> Result<BaselineResult> {
    let eval = evaluate(annotator, validation)?;
    Ok(BaselineResult::new(Method::Bwa, eval, 0, None))
}

fn initial_model(exp: &ExperimentData, cfg: &TrainConfig) -> Result<ModelTriple> {
    ModelTriple::new(
        cfg.arch.clone(),
        exp.feature_dim(),
        exp.num_classes(),
        initial_model_seed(cfg),
    )
}

fn finish(method: Method, model: ModelTriple, exp: &ExperimentData, cfg: &TrainConfig) -> Result<BaselineRun> {
    let eval = evaluate(&model.f1(), &exp.validation)?;
    Ok(BaselineRun {
        result: BaselineResult::new(method, eval, cfg.seed, Some(cfg.clone())),
        model,
    })
}

/// `F1` trained on labeled target only.
pub fn run_bt(exp: &ExperimentData, cfg: &TrainConfig) -> Result<BaselineRun> {
    cfg.validate()?;
    let mut model = initial_model(exp, cfg)?;
    let target = labeled(&exp.target, None);
    train_f1(
        &mut model,
        F1Schedule::Single(&target),
        &f1_options(cfg, "bt", cfg.bt_epochs),
        &mut seed::rng(cfg.seed, "bt"),
    )?;
    finish(Method::Bt, model, exp, cfg)
}

fn fine_tune(
    method: Method,
    exp: &ExperimentData,
    annotator: &WeakAnnotator,
    cfg: &TrainConfig,
    train_phi0: bool,
) -> Result<BaselineRun> {
    cfg.validate()?;
    let hw = effective_annotator(annotator, cfg);
    let mut model = initial_model(exp, cfg)?;
    let mut rng = seed::rng(cfg.seed, method.name());
    let source = labeled(&annotate_dataset(&hw, &exp.source)?, None);
    train_f1(
        &mut model,
        F1Schedule::Single(&source),
        &f1_options(cfg, method.name(), cfg.bf_source_epochs),
        &mut rng,
    )?;
    let target = labeled(&exp.target, None);
    let mut opts = f1_options(cfg, method.name(), cfg.bf_target_epochs);
    opts.train_phi0 = train_phi0;
    train_f1(&mut model, F1Schedule::Single(&target), &opts, &mut rng)?;
    finish(method, model, exp, cfg)
}

/// Train on weak-labeled source, then fine-tune only `phi1` on target.
pub fn run_bf1(exp: &ExperimentData, annotator: &WeakAnnotator, cfg: &TrainConfig) -> Result<BaselineRun> {
    fine_tune(Method::Bf1, exp, annotator, cfg, false)
}

/// Train on weak-labeled source, then fine-tune every `F1` parameter on target.
pub fn run_bf2(exp: &ExperimentData, annotator: &WeakAnnotator, cfg: &TrainConfig) -> Result<BaselineRun> {
    fine_tune(Method::Bf2, exp, annotator, cfg, true)
}

/// The pipeline with the correction head replaced by a direct classifier on
/// `phi0` features, and relabeling by that classifier's softmax output.
pub fn run_bdirect(exp: &ExperimentData, annotator: &WeakAnnotator, cfg: &TrainConfig) -> Result<BaselineRun> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.arch.correction_input = CorrectionInput::FeatureOnly;
    let hw = effective_annotator(annotator, &cfg);
    let mut model = initial_model(exp, &cfg)?;

    let d = weak_union(exp, &hw)?;
    stage1_train(&mut model, &d, &exp.target, &cfg)?;

    let t = &exp.target;
    let x = Matrix::from_rows(t.samples().iter().map(|s| s.x.as_slice()), t.feature_dim());
    let truth = Matrix::from_rows(t.samples().iter().map(|s| s.y.as_slice()), t.num_classes());
    train_correction(
        &mut model,
        &x,
        &Matrix::default(),
        &truth,
        &CorrectionOptions {
            stage: "bdirect",
            epochs: cfg.ep3,
            lr: cfg.correction_lr,
            batch_size: cfg.batch_size,
            objective: CorrectionObjective::Direct(cfg.kl_direction),
        },
        &mut seed::rng(cfg.seed, "bdirect/stage2"),
    )?;

    let union = exp.source.concat(&exp.target, "union")?;
    let m = union.num_classes();
    let xs = rows_f64(union.samples().iter().map(|s| s.x.as_slice()));
    let probs = softmax_rows(&model.f2_forward_batch(&xs, &[], union.len()), m);
    let labels = probs
        .chunks_exact(m)
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect();
    let d_new = union.relabel(labels, LabelKind::Relabeled)?;

    let mut fresh = model.reinitialize(stage4_model_seed(&cfg));
    stage4_train(&mut fresh, &d_new, &cfg)?;
    finish(Method::Bdirect, fresh, exp, &cfg)
}
