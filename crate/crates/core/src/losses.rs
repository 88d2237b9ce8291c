//! Training losses: KL to the (weak or relabeled) target, classified MMD
//! between domains, and the squared-error loss for the correction head.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::softmax_backward;
use crate::{Error, Result};

/// Floor applied to target entries before the KL logarithm.
pub const TARGET_EPS: f64 = 1e-8;

/// Which way round the KL divergence is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(prediction || target)`.
    #[default]
    PredictionToTarget,
    /// `KL(target || prediction)`, the cross-entropy direction.
    TargetToPrediction,
}

/// Where the classified-MMD term compares the two domains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmmdSpace {
    /// Softmax outputs of `F1`.
    #[default]
    Output,
    /// `phi0` features.
    Feature,
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

/// Clamp every entry to `[TARGET_EPS, 1]` and renormalise to sum 1.
pub fn clamp_target(target: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = target.iter().map(|v| v.clamp(TARGET_EPS, 1.0)).collect();
    let sum: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= sum);
    t
}

/// `KL(pred || clamp(target))`; `pred` must already be a probability vector.
pub fn kl_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    let t = clamp_target(target);
    Ok(kl_terms(pred, &t))
}

fn kl_terms(p: &[f64], t: &[f64]) -> f64 {
    let v: f64 = p
        .iter()
        .zip(t)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &ti)| pi * (libm::log(pi) - libm::log(ti)))
        .sum();
    v.max(0.0)
}

/// KL in the requested direction, evaluated from logits.
pub fn kl_loss_directed(pred: &[f64], target: &[f64], direction: KlDirection) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    let t = clamp_target(target);
    Ok(match direction {
        KlDirection::PredictionToTarget => kl_terms(pred, &t),
        KlDirection::TargetToPrediction => {
            let p: Vec<f64> = pred.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
            kl_terms(&t, &p)
        }
    })
}

/// Log-softmax of one row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>());
    logits.iter().map(|z| z - lse).collect()
}

/// KL loss of `softmax(logits)` against `target` and its gradient w.r.t. the logits.
pub fn kl_loss_logits_grad(
    logits: &[f64],
    target: &[f64],
    direction: KlDirection,
) -> Result<(f64, Vec<f64>)> {
    check_len(logits.len(), target.len())?;
    let t = clamp_target(target);
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|v| libm::exp(*v)).collect();
    match direction {
        KlDirection::PredictionToTarget => {
            let a: Vec<f64> = logp
                .iter()
                .zip(&t)
                .map(|(lp, ti)| lp - libm::log(*ti))
                .collect();
            let value: f64 = p.iter().zip(&a).map(|(pi, ai)| pi * ai).sum();
            let grad = p.iter().zip(&a).map(|(pi, ai)| pi * (ai - value)).collect();
            Ok((value.max(0.0), grad))
        }
        KlDirection::TargetToPrediction => {
            let value: f64 = t
                .iter()
                .zip(&logp)
                .map(|(ti, lp)| ti * (libm::log(*ti) - lp))
                .sum();
            let grad = p.iter().zip(&t).map(|(pi, ti)| pi - ti).collect();
            Ok((value.max(0.0), grad))
        }
    }
}

/// Per-class mean vectors for rows tagged with a class index.
fn class_means(rows: &[f64], classes: &[usize], width: usize, m: usize) -> (Vec<f64>, Vec<usize>) {
    let mut sums = vec![0.0; m * width];
    let mut counts = vec![0usize; m];
    for (row, &c) in rows.chunks_exact(width).zip(classes) {
        counts[c] += 1;
        for (s, v) in sums[c * width..(c + 1) * width].iter_mut().zip(row) {
            *s += v;
        }
    }
    for c in 0..m {
        if counts[c] > 0 {
            for s in &mut sums[c * width..(c + 1) * width] {
                *s /= counts[c] as f64;
            }
        }
    }
    (sums, counts)
}

/// Classified MMD on row-major batches.
///
/// `source`/`target` are `n x width` matrices; each row carries a class index
/// in `0..num_classes`. Only classes present in both batches contribute; the
/// sum of per-class mean distances is divided by their count. Returns the
/// loss and its gradient w.r.t. every source and target row.
pub fn cmmd_loss_grad(
    source: &[f64],
    source_classes: &[usize],
    target: &[f64],
    target_classes: &[usize],
    width: usize,
    num_classes: usize,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (ms, ns) = class_means(source, source_classes, width, num_classes);
    let (mt, nt) = class_means(target, target_classes, width, num_classes);
    let shared: Vec<usize> = (0..num_classes).filter(|&c| ns[c] > 0 && nt[c] > 0).collect();
    let mut gs = vec![0.0; source.len()];
    let mut gt = vec![0.0; target.len()];
    if shared.is_empty() {
        return (0.0, gs, gt);
    }
    let k = shared.len() as f64;
    let mut total = 0.0;
    // unit[c] = (mean_s - mean_t) / ||mean_s - mean_t|| / k
    let mut unit = vec![0.0; num_classes * width];
    for &c in &shared {
        let diff: Vec<f64> = (0..width)
            .map(|j| ms[c * width + j] - mt[c * width + j])
            .collect();
        let norm = libm::sqrt(diff.iter().map(|d| d * d).sum::<f64>());
        total += norm;
        if norm > 0.0 {
            for j in 0..width {
                unit[c * width + j] = diff[j] / norm / k;
            }
        }
    }
    for (row, &c) in gs.chunks_exact_mut(width).zip(source_classes) {
        if nt[c] > 0 {
            for j in 0..width {
                row[j] = unit[c * width + j] / ns[c] as f64;
            }
        }
    }
    for (row, &c) in gt.chunks_exact_mut(width).zip(target_classes) {
        if ns[c] > 0 {
            for j in 0..width {
                row[j] = -unit[c * width + j] / nt[c] as f64;
            }
        }
    }
    (total / k, gs, gt)
}

/// Classified MMD over `(output, weak-argmax class)` pairs from each domain.
pub fn cmmd_loss(
    source: &[(Vec<f64>, usize)],
    target: &[(Vec<f64>, usize)],
    num_classes: usize,
) -> Result<f64> {
    let width = source
        .first()
        .or(target.first())
        .map(|(v, _)| v.len())
        .unwrap_or(0);
    let mut flat_s = Vec::with_capacity(source.len() * width);
    let mut flat_t = Vec::with_capacity(target.len() * width);
    for (v, c) in source.iter().chain(target) {
        check_len(width, v.len())?;
        if *c >= num_classes {
            return Err(Error::InvalidArgument(alloc::format!(
                "class index {c} out of range for {num_classes} classes"
            )));
        }
    }
    for (v, _) in source {
        flat_s.extend_from_slice(v);
    }
    for (v, _) in target {
        flat_t.extend_from_slice(v);
    }
    let cs: Vec<usize> = source.iter().map(|(_, c)| *c).collect();
    let ct: Vec<usize> = target.iter().map(|(_, c)| *c).collect();
    Ok(cmmd_loss_grad(&flat_s, &cs, &flat_t, &ct, width, num_classes).0)
}

/// `||correction - (y_true - weak)||^2` for one sample.
pub fn discrepancy_loss(correction: &[f64], y_true: &[f64], weak: &[f64]) -> Result<f64> {
    check_len(correction.len(), y_true.len())?;
    check_len(correction.len(), weak.len())?;
    Ok(correction
        .iter()
        .zip(y_true.iter().zip(weak))
        .map(|(c, (y, w))| {
            let d = c - (y - w);
            d * d
        })
        .sum())
}

/// Batch mean of [`discrepancy_loss`] and its gradient w.r.t. the corrections.
///
/// All three arguments are row-major `batch x width`.
pub fn discrepancy_loss_grad(
    corrections: &[f64],
    y_true: &[f64],
    weak: &[f64],
    width: usize,
) -> Result<(f64, Vec<f64>)> {
    check_len(corrections.len(), y_true.len())?;
    check_len(corrections.len(), weak.len())?;
    if width == 0 || !corrections.len().is_multiple_of(width) {
        return Err(Error::InvalidArgument("ragged correction batch".into()));
    }
    let batch = (corrections.len() / width).max(1) as f64;
    let mut total = 0.0;
    let grad = corrections
        .iter()
        .zip(y_true.iter().zip(weak))
        .map(|(c, (y, w))| {
            let d = c - (y - w);
            total += d * d;
            2.0 * d / batch
        })
        .collect();
    Ok((total / batch, grad))
}

/// A loss value with its named addends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub components: BTreeMap<String, f64>,
}

/// `kl_loss(pred, target) + alpha * cmmd_value`.
pub fn combined_loss(pred: &[f64], target: &[f64], cmmd_value: f64, alpha: f64) -> Result<LossValue> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be non-negative".into()));
    }
    let kl = kl_loss(pred, target)?;
    let mut components = BTreeMap::new();
    components.insert("kl".into(), kl);
    components.insert("cmmd".into(), cmmd_value);
    components.insert("alpha".into(), alpha);
    Ok(LossValue {
        value: kl + alpha * cmmd_value,
        components,
    })
}

/// Gradient of `mean_rows KL(softmax(z) || t) + alpha * cmmd(softmax(z))`
/// w.r.t. the logits, with the CMMD computed between the first `n_source`
/// rows and the rest. Used to check the combined objective end to end.
pub fn combined_loss_logits_grad(
    logits: &[f64],
    targets: &[f64],
    classes: &[usize],
    n_source: usize,
    width: usize,
    alpha: f64,
    direction: KlDirection,
) -> Result<(f64, Vec<f64>)> {
    check_len(logits.len(), targets.len())?;
    let rows = logits.len() / width;
    check_len(rows, classes.len())?;
    let mut grad = vec![0.0; logits.len()];
    let mut kl_total = 0.0;
    let mut probs = vec![0.0; logits.len()];
    for r in 0..rows {
        let z = &logits[r * width..(r + 1) * width];
        let (v, g) = kl_loss_logits_grad(z, &targets[r * width..(r + 1) * width], direction)?;
        kl_total += v;
        for j in 0..width {
            grad[r * width + j] = g[j] / rows as f64;
        }
        let lp = log_softmax(z);
        for j in 0..width {
            probs[r * width + j] = libm::exp(lp[j]);
        }
    }
    let split = n_source * width;
    let (cmmd, gs, gt) = cmmd_loss_grad(
        &probs[..split],
        &classes[..n_source],
        &probs[split..],
        &classes[n_source..],
        width,
        width,
    );
    let mut dp = gs;
    dp.extend(gt);
    dp.iter_mut().for_each(|v| *v *= alpha);
    let dz = softmax_backward(&probs, &dp, width);
    for (g, d) in grad.iter_mut().zip(dz) {
        *g += d;
    }
    Ok((kl_total / rows as f64 + alpha * cmmd, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_hand_value() {
        let v = kl_loss(&[0.5, 0.5], &[0.75, 0.25]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.14384).abs() < 1e-5);
        assert_eq!(kl_loss(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(kl_loss(&[0.2, 0.8], &[1.0]).is_err());
    }

    #[test]
    fn kl_clamps_unnormalised_targets() {
        // relabeled targets may leave the simplex
        let v = kl_loss(&[0.5, 0.5], &[1.3, -0.3]).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn cmmd_single_class_hand_value() {
        let v = cmmd_loss(&[(vec![1.0, 0.0], 0)], &[(vec![0.0, 0.0], 0)], 1).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let same = cmmd_loss(&[(vec![0.3, 0.7], 1)], &[(vec![0.3, 0.7], 1)], 2).unwrap();
        assert_eq!(same, 0.0);
        // no shared class
        let none = cmmd_loss(&[(vec![0.3, 0.7], 0)], &[(vec![0.3, 0.7], 1)], 2).unwrap();
        assert_eq!(none, 0.0);
    }

    #[test]
    fn discrepancy_hand_value() {
        let v = discrepancy_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.6, 0.4]).unwrap();
        assert!((v - 0.32).abs() < 1e-15);
        assert_eq!(discrepancy_loss(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(
            discrepancy_loss(&[0.4, -0.4], &[1.0, 0.0], &[0.6, 0.4]).unwrap(),
            0.0
        );
    }

    #[test]
    fn combined_is_kl_plus_scaled_cmmd() {
        let pred = [0.5, 0.5];
        let target = [0.75, 0.25];
        let kl = kl_loss(&pred, &target).unwrap();
        let lv = combined_loss(&pred, &target, 100.0, 1e-4).unwrap();
        assert_eq!(lv.value, kl + 1e-4 * 100.0);
        assert_eq!(combined_loss(&pred, &target, 100.0, 0.0).unwrap().value, kl);
        assert!(combined_loss(&pred, &target, 1.0, -1.0).is_err());
    }
}
