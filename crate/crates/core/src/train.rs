//! Optimisation loops shared by the pipeline, the baselines and the
//! early-stopped annotator.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::losses::{cmmd_loss_grad, discrepancy_loss_grad, kl_loss_logits_grad, CmmdSpace, KlDirection};
use crate::nets::ModelTriple;
use crate::nn::{softmax_backward, softmax_rows, Adam, Mlp, MlpGrad};
use crate::{argmax, Error, Result};

/// Row-major `rows x width` matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Matrix {
    pub data: Vec<f64>,
    pub width: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, width: usize) -> Self {
        debug_assert!(width == 0 || data.len().is_multiple_of(width));
        Self { data, width }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f32]>, width: usize) -> Self {
        Self::new(crate::nets::rows_f64(rows), width)
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn gather_into(&self, idx: &[usize], out: &mut Vec<f64>) {
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
    }
}

/// Features, training targets and CMMD class per row.
#[derive(Clone, Debug, Default)]
pub(crate) struct Labeled {
    pub x: Matrix,
    pub y: Matrix,
    pub classes: Vec<usize>,
}

impl Labeled {
    pub fn new(x: Matrix, y: Matrix) -> Self {
        let classes = (0..y.rows()).map(|i| argmax(y.row(i))).collect();
        Self { x, y, classes }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }
}

/// Endless stream of indices in `0..n`, reshuffled on every wrap.
pub(crate) struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    pub fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    pub fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One shuffled pass over `0..n` in batches of at most `batch`.
pub(crate) fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn non_finite(stage: &str, epoch: usize) -> Error {
    Error::NonFinite {
        stage: String::from(stage),
        epoch,
    }
}

/// What one F1 training call optimises.
pub(crate) enum F1Schedule<'a> {
    /// One source batch and one target batch per step with CMMD between them;
    /// an epoch is a pass over the larger side.
    Paired {
        source: &'a Labeled,
        target: &'a Labeled,
        alpha: f64,
    },
    /// KL only over a single set.
    Single(&'a Labeled),
}

pub(crate) struct F1Options<'a> {
    pub stage: &'a str,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub direction: KlDirection,
    pub cmmd_space: CmmdSpace,
    pub train_phi0: bool,
}

/// Train `F1 = phi1 . phi0`; `phi2` is never touched. Returns the mean loss
/// per epoch.
pub(crate) fn train_f1(
    model: &mut ModelTriple,
    schedule: F1Schedule<'_>,
    opts: &F1Options<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if opts.epochs == 0 {
        return Ok(Vec::new());
    }
    // A paired schedule with one empty side degrades to plain KL training.
    let schedule = match schedule {
        F1Schedule::Paired { source, target, .. } if target.len() == 0 => F1Schedule::Single(source),
        F1Schedule::Paired { source, target, .. } if source.len() == 0 => F1Schedule::Single(target),
        s => s,
    };
    let mut adam0 = Adam::new(opts.lr, model.phi0.num_params());
    let mut adam1 = Adam::new(opts.lr, model.phi1.num_params());
    let b = opts.batch_size.max(1);
    let mut losses = Vec::with_capacity(opts.epochs);
    match schedule {
        F1Schedule::Single(set) => {
            if set.len() == 0 {
                return Err(Error::EmptyDataset(String::from(opts.stage)));
            }
            for epoch in 0..opts.epochs {
                let mut total = 0.0;
                let batches = epoch_batches(set.len(), b, rng);
                for idx in &batches {
                    let mut x = Vec::new();
                    let mut y = Vec::new();
                    set.x.gather_into(idx, &mut x);
                    set.y.gather_into(idx, &mut y);
                    let loss = f1_step(model, &x, &y, None, opts, &mut adam0, &mut adam1)
                        .ok_or_else(|| non_finite(opts.stage, epoch))?;
                    total += loss;
                }
                losses.push(total / batches.len() as f64);
            }
        }
        F1Schedule::Paired {
            source,
            target,
            alpha,
        } => {
            let steps = source.len().max(target.len()).div_ceil(b);
            let mut cs = Cycler::new(source.len(), rng);
            let mut ct = Cycler::new(target.len(), rng);
            for epoch in 0..opts.epochs {
                let mut total = 0.0;
                for _ in 0..steps {
                    let is = cs.take(b, rng);
                    let it = ct.take(b, rng);
                    let mut x = Vec::with_capacity((is.len() + it.len()) * source.x.width);
                    let mut y = Vec::with_capacity((is.len() + it.len()) * source.y.width);
                    source.x.gather_into(&is, &mut x);
                    target.x.gather_into(&it, &mut x);
                    source.y.gather_into(&is, &mut y);
                    target.y.gather_into(&it, &mut y);
                    let classes: Vec<usize> = is
                        .iter()
                        .map(|&i| source.classes[i])
                        .chain(it.iter().map(|&i| target.classes[i]))
                        .collect();
                    let cmmd = CmmdTerm {
                        classes: &classes,
                        n_source: is.len(),
                        alpha,
                    };
                    let loss = f1_step(model, &x, &y, Some(cmmd), opts, &mut adam0, &mut adam1)
                        .ok_or_else(|| non_finite(opts.stage, epoch))?;
                    total += loss;
                }
                losses.push(total / steps as f64);
            }
        }
    }
    Ok(losses)
}

struct CmmdTerm<'a> {
    classes: &'a [usize],
    n_source: usize,
    alpha: f64,
}

/// One optimiser step; `None` when the loss or a gradient is not finite.
fn f1_step(
    model: &mut ModelTriple,
    x: &[f64],
    y: &[f64],
    cmmd: Option<CmmdTerm<'_>>,
    opts: &F1Options<'_>,
    adam0: &mut Adam,
    adam1: &mut Adam,
) -> Option<f64> {
    let m = model.num_classes;
    let f = model.feature_width();
    let n = y.len() / m;
    let c0 = model.phi0.forward_cached(x, n);
    let c1 = model.phi1.forward_cached(c0.output(), n);
    let logits = c1.output();
    let mut dlogits = vec![0.0; n * m];
    let mut loss = 0.0;
    for r in 0..n {
        let (v, g) = kl_loss_logits_grad(
            &logits[r * m..(r + 1) * m],
            &y[r * m..(r + 1) * m],
            opts.direction,
        )
        .ok()?;
        loss += v / n as f64;
        for (d, gv) in dlogits[r * m..(r + 1) * m].iter_mut().zip(g) {
            *d = gv / n as f64;
        }
    }
    let mut dfeat_extra: Option<Vec<f64>> = None;
    if let Some(t) = cmmd.filter(|t| t.alpha > 0.0 && t.n_source > 0 && t.n_source < n) {
        let (cls_s, cls_t) = t.classes.split_at(t.n_source);
        match opts.cmmd_space {
            CmmdSpace::Output => {
                let p = softmax_rows(logits, m);
                let (v, gs, gt) =
                    cmmd_loss_grad(&p[..t.n_source * m], cls_s, &p[t.n_source * m..], cls_t, m, m);
                loss += t.alpha * v;
                let mut dp = gs;
                dp.extend(gt);
                dp.iter_mut().for_each(|g| *g *= t.alpha);
                for (d, e) in dlogits.iter_mut().zip(softmax_backward(&p, &dp, m)) {
                    *d += e;
                }
            }
            CmmdSpace::Feature => {
                let feat = c0.output();
                let (v, gs, gt) = cmmd_loss_grad(
                    &feat[..t.n_source * f],
                    cls_s,
                    &feat[t.n_source * f..],
                    cls_t,
                    f,
                    m,
                );
                loss += t.alpha * v;
                let mut d = gs;
                d.extend(gt);
                d.iter_mut().for_each(|g| *g *= t.alpha);
                dfeat_extra = Some(d);
            }
        }
    }
    if !loss.is_finite() {
        return None;
    }
    let (g1, dfeat) = model.phi1.backward(&c1, &dlogits, opts.train_phi0);
    let g0 = match dfeat {
        Some(mut dfeat) => {
            if let Some(extra) = dfeat_extra {
                for (a, b) in dfeat.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            Some(model.phi0.backward(&c0, &dfeat, false).0)
        }
        None => None,
    };
    if !g1.is_finite() || g0.as_ref().is_some_and(|g| !g.is_finite()) {
        return None;
    }
    adam1.step(&mut model.phi1, &g1);
    if let Some(g0) = g0 {
        adam0.step(&mut model.phi0, &g0);
    }
    Some(loss)
}

/// Loss used to fit the correction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CorrectionObjective {
    /// Regress `truth - weak` with squared error.
    Residual,
    /// Classify directly: KL of `softmax(phi2)` against the truth.
    Direct(KlDirection),
}

pub(crate) struct CorrectionOptions<'a> {
    pub stage: &'a str,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub objective: CorrectionObjective,
}

/// Train `F2`: `phi0` and `phi2` move, `phi1` is never touched.
pub(crate) fn train_correction(
    model: &mut ModelTriple,
    x: &Matrix,
    weak: &Matrix,
    truth: &Matrix,
    opts: &CorrectionOptions<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if opts.epochs == 0 {
        return Ok(Vec::new());
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset(String::from(opts.stage)));
    }
    let mut adam0 = Adam::new(opts.lr, model.phi0.num_params());
    let mut adam2 = Adam::new(opts.lr, model.phi2.num_params());
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let batches = epoch_batches(x.rows(), opts.batch_size, rng);
        let mut total = 0.0;
        for idx in &batches {
            let (mut bx, mut bw, mut bt) = (Vec::new(), Vec::new(), Vec::new());
            x.gather_into(idx, &mut bx);
            weak.gather_into(idx, &mut bw);
            truth.gather_into(idx, &mut bt);
            let (loss, g0, g2) = correction_grad(model, &bx, &bw, &bt, idx.len(), opts.objective)
                .filter(|(l, g0, g2)| l.is_finite() && g0.is_finite() && g2.is_finite())
                .ok_or_else(|| non_finite(opts.stage, epoch))?;
            adam0.step(&mut model.phi0, &g0);
            adam2.step(&mut model.phi2, &g2);
            total += loss;
        }
        losses.push(total / batches.len() as f64);
    }
    Ok(losses)
}

/// Loss and gradients of the correction objective on one batch.
pub(crate) fn correction_grad(
    model: &ModelTriple,
    x: &[f64],
    weak: &[f64],
    truth: &[f64],
    n: usize,
    objective: CorrectionObjective,
) -> Option<(f64, MlpGrad, MlpGrad)> {
    let m = model.num_classes;
    let f = model.feature_width();
    let c0 = model.phi0.forward_cached(x, n);
    let input = model.phi2_input(weak, c0.output(), n);
    let c2 = model.phi2.forward_cached(&input, n);
    let (loss, dout) = match objective {
        CorrectionObjective::Residual => discrepancy_loss_grad(c2.output(), truth, weak, m).ok()?,
        CorrectionObjective::Direct(direction) => {
            let out = c2.output();
            let mut total = 0.0;
            let mut grad = vec![0.0; n * m];
            for r in 0..n {
                let (v, g) =
                    kl_loss_logits_grad(&out[r * m..(r + 1) * m], &truth[r * m..(r + 1) * m], direction)
                        .ok()?;
                total += v / n as f64;
                for (d, gv) in grad[r * m..(r + 1) * m].iter_mut().zip(g) {
                    *d = gv / n as f64;
                }
            }
            (total, grad)
        }
    };
    let (g2, dinput) = model.phi2.backward(&c2, &dout, true);
    let dinput = dinput?;
    let offset = if model.takes_weak_label() { m } else { 0 };
    let width = offset + f;
    let mut dfeat = Vec::with_capacity(n * f);
    for r in 0..n {
        dfeat.extend_from_slice(&dinput[r * width + offset..(r + 1) * width]);
    }
    let (g0, _) = model.phi0.backward(&c0, &dfeat, false);
    Some((loss, g0, g2))
}

/// Per-sample KL gradient of `F1` over `phi0` then `phi1` parameters.
pub(crate) fn f1_sample_grad(
    model: &ModelTriple,
    x: &[f64],
    y: &[f64],
    direction: KlDirection,
) -> Option<(f64, Vec<f64>)> {
    let c0 = model.phi0.forward_cached(x, 1);
    let c1 = model.phi1.forward_cached(c0.output(), 1);
    let (loss, dlogits) = kl_loss_logits_grad(c1.output(), y, direction).ok()?;
    let (g1, dfeat) = model.phi1.backward(&c1, &dlogits, true);
    let (g0, _) = model.phi0.backward(&c0, &dfeat?, false);
    let mut flat = g0.flatten();
    flat.extend(g1.flatten());
    Some((loss, flat))
}

/// Per-sample squared-error gradient of `F2` over `phi0` then `phi2` parameters.
pub(crate) fn f2_sample_grad(
    model: &ModelTriple,
    x: &[f64],
    weak: &[f64],
    truth: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let (loss, g0, g2) = correction_grad(model, x, weak, truth, 1, CorrectionObjective::Residual)?;
    let mut flat = g0.flatten();
    flat.extend(g2.flatten());
    Some((loss, flat))
}

/// Train `mlp` on `data` with Adam and per-epoch shuffling; `stop` is asked
/// after every step and ends training early when it returns true.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_mlp(
    mlp: &mut Mlp,
    data: &Labeled,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    direction: KlDirection,
    stage: &str,
    rng: &mut ChaCha8Rng,
    stop: &mut dyn FnMut(&Mlp) -> bool,
) -> Result<Vec<f64>> {
    if data.len() == 0 {
        return Err(Error::EmptyDataset(String::from(stage)));
    }
    let m = mlp.out_dim();
    let mut adam = Adam::new(lr, mlp.num_params());
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let batches = epoch_batches(data.len(), batch_size, rng);
        let mut total = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let n = idx.len();
            let (mut x, mut y) = (Vec::new(), Vec::new());
            data.x.gather_into(idx, &mut x);
            data.y.gather_into(idx, &mut y);
            let cache = mlp.forward_cached(&x, n);
            let out = cache.output();
            let mut d = vec![0.0; n * m];
            let mut loss = 0.0;
            for r in 0..n {
                let (v, g) = kl_loss_logits_grad(&out[r * m..(r + 1) * m], &y[r * m..(r + 1) * m], direction)?;
                loss += v / n as f64;
                for (dv, gv) in d[r * m..(r + 1) * m].iter_mut().zip(g) {
                    *dv = gv / n as f64;
                }
            }
            let (g, _) = mlp.backward(&cache, &d, false);
            if !loss.is_finite() || !g.is_finite() {
                return Err(non_finite(stage, epoch));
            }
            adam.step(mlp, &g);
            total += loss;
            if stop(mlp) {
                losses.push(total / (step + 1) as f64);
                return Ok(losses);
            }
        }
        losses.push(total / batches.len() as f64);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cycler_covers_every_index_per_wrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Cycler::new(5, &mut rng);
        let mut first = c.take(5, &mut rng);
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.take(12, &mut rng).len(), 12);
        assert!(Cycler::new(0, &mut rng).take(3, &mut rng).is_empty());
    }

    #[test]
    fn epoch_batches_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
