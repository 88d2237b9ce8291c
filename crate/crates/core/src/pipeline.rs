//! The four-stage procedure: weak-label pretraining, correction-head fit,
//! relabeling, and retraining from scratch on the relabeled union.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_dataset, WeakAnnotator};
use crate::data::{Dataset, Domain, ExperimentData, LabelKind};
use crate::nets::{rows_f64, Component, ModelTriple, TrainConfig};
use crate::train::{
    train_correction, train_f1, CorrectionObjective, CorrectionOptions, F1Options, F1Schedule,
    Labeled, Matrix,
};
use crate::{argmax, seed, Classifier, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub epochs_run: usize,
    /// Mean loss of the last epoch; NaN when no epoch ran.
    #[serde(with = "crate::nan_serde::scalar")]
    pub final_train_loss: f64,
    /// Seconds; filled in by callers that own a clock.
    pub wall_time: f64,
    pub frozen_components: Vec<Component>,
    pub epoch_losses: Vec<f64>,
}

impl StageReport {
    fn new(stage: u8, frozen: &[Component], epoch_losses: Vec<f64>) -> Self {
        Self {
            stage,
            epochs_run: epoch_losses.len(),
            final_train_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
            wall_time: 0.0,
            frozen_components: frozen.to_vec(),
            epoch_losses,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelStats {
    /// Share of relabeled samples whose argmax differs from the weak label's.
    pub fraction_argmax_changed_vs_weak: f64,
    /// Argmax accuracy of the relabeled source targets, when source truth is known.
    pub relabel_accuracy_on_source: Option<f64>,
    /// Weak-annotator accuracy on the same source samples.
    pub weak_accuracy_on_source: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub stage_reports: Vec<StageReport>,
    pub relabel_stats: Option<RelabelStats>,
    pub final_accuracy: f64,
    /// NaN for classes absent from the evaluation set.
    #[serde(with = "crate::nan_serde::vec")]
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Overall and per-class argmax accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    #[serde(with = "crate::nan_serde::vec")]
    pub per_class: Vec<f64>,
    pub class_counts: Vec<usize>,
}

impl Evaluation {
    /// Per-class accuracies averaged with class-count weights.
    pub fn weighted_mean(&self) -> f64 {
        let total: usize = self.class_counts.iter().sum();
        self.per_class
            .iter()
            .zip(&self.class_counts)
            .filter(|(_, &n)| n > 0)
            .map(|(a, &n)| a * n as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Argmax accuracy of `classifier` on ground-truth `ds`, lowest index on ties.
pub fn evaluate(classifier: &impl Classifier, ds: &Dataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(ds.name().into()));
    }
    let m = ds.num_classes();
    let mut hits = vec![0usize; m];
    let mut counts = vec![0usize; m];
    for s in ds.samples() {
        let c = argmax(&s.y);
        counts[c] += 1;
        if argmax(&classifier.predict(&s.x)) == c {
            hits[c] += 1;
        }
    }
    let per_class = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
        .collect();
    Ok(Evaluation {
        accuracy: hits.iter().sum::<usize>() as f64 / ds.len() as f64,
        per_class,
        class_counts: counts,
    })
}

pub(crate) fn labeled(ds: &Dataset, domain: Option<Domain>) -> Labeled {
    let rows: Vec<_> = ds
        .samples()
        .iter()
        .filter(|s| domain.is_none_or(|d| s.domain == d))
        .collect();
    Labeled::new(
        Matrix::from_rows(rows.iter().map(|s| s.x.as_slice()), ds.feature_dim()),
        Matrix::from_rows(rows.iter().map(|s| s.y.as_slice()), ds.num_classes()),
    )
}

pub(crate) fn f1_options<'a>(cfg: &TrainConfig, stage: &'a str, epochs: usize) -> F1Options<'a> {
    F1Options {
        stage,
        epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        direction: cfg.kl_direction,
        cmmd_space: cfg.cmmd_space,
        train_phi0: true,
    }
}

/// The annotator as the pipeline uses it, honouring `hard_weak_labels`.
pub fn effective_annotator(a: &WeakAnnotator, cfg: &TrainConfig) -> WeakAnnotator {
    let hard = a.hard || cfg.hard_weak_labels;
    a.clone().with_hard(hard)
}

/// The weak-labeled union `D` of source and target.
pub fn weak_union(exp: &ExperimentData, annotator: &WeakAnnotator) -> Result<Dataset> {
    let s = annotate_dataset(annotator, &exp.source)?;
    let t = annotate_dataset(annotator, &exp.target)?;
    s.concat(&t, "weak_union")
}

/// Stage 1: `ep1` epochs of KL + CMMD on `d` with paired source/target
/// batches, then `ep2` epochs of KL on labeled `target`. `phi2` is frozen.
pub fn stage1_train(m: &mut ModelTriple, d: &Dataset, target: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    let mut rng = seed::rng(cfg.seed, "stage1");
    let source = labeled(d, Some(Domain::Source));
    let weak_target = labeled(d, Some(Domain::Target));
    let mut losses = train_f1(
        m,
        F1Schedule::Paired {
            source: &source,
            target: &weak_target,
            alpha: cfg.alpha,
        },
        &f1_options(cfg, "stage1", cfg.ep1),
        &mut rng,
    )?;
    if cfg.ep2 > 0 {
        let labeled_target = labeled(target, None);
        losses.extend(train_f1(
            m,
            F1Schedule::Single(&labeled_target),
            &f1_options(cfg, "stage1", cfg.ep2),
            &mut rng,
        )?);
    }
    Ok(StageReport::new(1, &[Component::Phi2], losses))
}

fn weak_matrix(annotator: &WeakAnnotator, ds: &Dataset) -> Matrix {
    let data = ds
        .samples()
        .iter()
        .flat_map(|s| annotator.predict(&s.x))
        .collect();
    Matrix::new(data, annotator.num_classes)
}

/// Stage 2: fit `phi2 . phi0` to `y_t - h^w(x)` on labeled target. `phi1` is frozen.
pub fn stage2_train(
    m: &mut ModelTriple,
    target: &Dataset,
    annotator: &WeakAnnotator,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    let mut rng = seed::rng(cfg.seed, "stage2");
    let x = Matrix::from_rows(target.samples().iter().map(|s| s.x.as_slice()), target.feature_dim());
    let truth = Matrix::from_rows(target.samples().iter().map(|s| s.y.as_slice()), target.num_classes());
    let weak = weak_matrix(annotator, target);
    let losses = train_correction(
        m,
        &x,
        &weak,
        &truth,
        &CorrectionOptions {
            stage: "stage2",
            epochs: cfg.ep3,
            lr: cfg.correction_lr,
            batch_size: cfg.batch_size,
            objective: CorrectionObjective::Residual,
        },
        &mut rng,
    )?;
    Ok(StageReport::new(2, &[Component::Phi1], losses))
}

const RELABEL_CHUNK: usize = 256;

/// Stage 3: `y_new = h^w(x) + phi2(h^w(x), phi0(x))` for every sample, stored unclamped.
pub fn stage3_relabel(m: &ModelTriple, annotator: &WeakAnnotator, xs: &Dataset) -> Result<Dataset> {
    let width = m.num_classes;
    let weak = weak_matrix(annotator, xs);
    let mut labels = Vec::with_capacity(xs.len());
    for (start, chunk) in xs.samples().chunks(RELABEL_CHUNK).enumerate() {
        let start = start * RELABEL_CHUNK;
        let n = chunk.len();
        let x = rows_f64(chunk.iter().map(|s| s.x.as_slice()));
        let w = &weak.data[start * width..(start + n) * width];
        let corr = m.f2_forward_batch(&x, w, n);
        for r in 0..n {
            labels.push(
                (0..width)
                    .map(|j| (w[r * width + j] + corr[r * width + j]) as f32)
                    .collect(),
            );
        }
    }
    Ok(xs.relabel(labels, LabelKind::Relabeled)?.with_name("relabeled"))
}

/// Stage 4: train `F1` of a freshly initialised triple on `d_new`, grouping
/// CMMD classes by the argmax of the new targets. `phi2` is frozen.
pub fn stage4_train(fresh: &mut ModelTriple, d_new: &Dataset, cfg: &TrainConfig) -> Result<StageReport> {
    let mut rng = seed::rng(cfg.seed, "stage4");
    let source = labeled(d_new, Some(Domain::Source));
    let target = labeled(d_new, Some(Domain::Target));
    let losses = train_f1(
        fresh,
        F1Schedule::Paired {
            source: &source,
            target: &target,
            alpha: cfg.alpha,
        },
        &f1_options(cfg, "stage4", cfg.ep4),
        &mut rng,
    )?;
    Ok(StageReport::new(4, &[Component::Phi2], losses))
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct WalRun {
    pub stage1: ModelTriple,
    pub stage2: ModelTriple,
    pub model: ModelTriple,
    pub relabeled: Dataset,
    pub report: RunReport,
}

/// Seed of the triple built before stage 1.
pub fn initial_model_seed(cfg: &TrainConfig) -> u64 {
    seed::derive(cfg.seed, "model/init")
}

/// Seed used to re-initialise the triple before stage 4.
pub fn stage4_model_seed(cfg: &TrainConfig) -> u64 {
    seed::derive(cfg.seed, "model/stage4")
}

pub fn run_wal(exp: &ExperimentData, annotator: &WeakAnnotator, cfg: &TrainConfig) -> Result<WalRun> {
    run_wal_observed(exp, annotator, cfg, &mut |_, _| {})
}

/// [`run_wal`] calling `observer` after every stage with the model as it
/// stands and the stage report, which the observer may amend.
pub fn run_wal_observed(
    exp: &ExperimentData,
    annotator: &WeakAnnotator,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&ModelTriple, &mut StageReport),
) -> Result<WalRun> {
    cfg.validate()?;
    let hw = effective_annotator(annotator, cfg);
    let mut model = ModelTriple::new(
        cfg.arch.clone(),
        exp.feature_dim(),
        exp.num_classes(),
        initial_model_seed(cfg),
    )?;
    let mut reports = Vec::with_capacity(4);

    let d = weak_union(exp, &hw)?;
    let mut r1 = stage1_train(&mut model, &d, &exp.target, cfg)?;
    observer(&model, &mut r1);
    reports.push(r1);
    let stage1 = model.clone();

    let mut r2 = stage2_train(&mut model, &exp.target, &hw, cfg)?;
    observer(&model, &mut r2);
    reports.push(r2);
    let stage2 = model.clone();

    let union = exp.source.concat(&exp.target, "union")?;
    let relabeled = stage3_relabel(&model, &hw, &union)?;
    let mut r3 = StageReport::new(3, &Component::ALL, Vec::new());
    observer(&model, &mut r3);
    reports.push(r3);
    let relabel_stats = relabel_stats(&relabeled, &d, &exp.source);

    let mut fresh = model.reinitialize(stage4_model_seed(cfg));
    let mut r4 = stage4_train(&mut fresh, &relabeled, cfg)?;
    observer(&fresh, &mut r4);
    reports.push(r4);

    let eval = evaluate(&fresh.f1(), &exp.validation)?;
    Ok(WalRun {
        stage1,
        stage2,
        relabeled,
        report: RunReport {
            method: String::from("wal"),
            stage_reports: reports,
            relabel_stats: Some(relabel_stats),
            final_accuracy: eval.accuracy,
            per_class_accuracy: eval.per_class,
            class_counts: eval.class_counts,
            seed: cfg.seed,
            config: cfg.clone(),
        },
        model: fresh,
    })
}

/// Compare relabeled targets with the weak labels and, on the source part,
/// with the ground truth. `relabeled` and `weak` list source samples first.
pub fn relabel_stats(relabeled: &Dataset, weak: &Dataset, source_truth: &Dataset) -> RelabelStats {
    let changed = relabeled
        .samples()
        .iter()
        .zip(weak.samples())
        .filter(|(a, b)| argmax(&a.y) != argmax(&b.y))
        .count();
    let n = relabeled.len().max(1) as f64;
    let (relabel_acc, weak_acc) =
        if source_truth.label_kind() == LabelKind::GroundTruth && !source_truth.is_empty() {
            let ns = source_truth.len() as f64;
            let mut hit_new = 0usize;
            let mut hit_weak = 0usize;
            for ((t, r), w) in source_truth
                .samples()
                .iter()
                .zip(relabeled.samples())
                .zip(weak.samples())
            {
                let c = argmax(&t.y);
                hit_new += usize::from(argmax(&r.y) == c);
                hit_weak += usize::from(argmax(&w.y) == c);
            }
            (Some(hit_new as f64 / ns), Some(hit_weak as f64 / ns))
        } else {
            (None, None)
        };
    RelabelStats {
        fraction_argmax_changed_vs_weak: changed as f64 / n,
        relabel_accuracy_on_source: relabel_acc,
        weak_accuracy_on_source: weak_acc,
    }
}
