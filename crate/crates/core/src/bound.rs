//! Error-bound toolkit: Gaussian KL, gradient statistics, PAC-Bayes terms,
//! classification and discrepancy distances, classifier arithmetic, and
//! numerical checks of the decomposition inequalities.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::WeakAnnotator;
use crate::data::Dataset;
use crate::losses::KlDirection;
use crate::nets::{ModelTriple, TrainConfig};
use crate::pipeline::{effective_annotator, initial_model_seed, WalRun};
use crate::train::{f1_sample_grad, f2_sample_grad};
use crate::{seed, Classifier, Error, FnClassifier, Result};

/// `KL(N(mu1, sigma1^2) || N(mu2, sigma2^2))`.
pub fn gaussian_kl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "standard deviations must be positive, got {sigma1} and {sigma2}"
        )));
    }
    let d = mu1 - mu2;
    let v = libm::log(sigma2 / sigma1) + (sigma1 * sigma1 + d * d) / (2.0 * sigma2 * sigma2) - 0.5;
    Ok(v.max(0.0))
}

/// Mean and variance of per-sample gradients, aggregated over parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: f64,
    pub sigma2: f64,
    pub m: usize,
}

/// Per-parameter gradient statistics over `m` samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mu: Vec<f64>,
    /// Population variance over samples.
    pub sigma2: Vec<f64>,
    pub m: usize,
}

impl ParamStats {
    /// Means over parameters of the per-parameter mean and variance.
    pub fn aggregate(&self) -> GaussianStats {
        let p = self.mu.len().max(1) as f64;
        GaussianStats {
            mu: self.mu.iter().sum::<f64>() / p,
            sigma2: self.sigma2.iter().sum::<f64>() / p,
            m: self.m,
        }
    }

    /// Per-parameter bound on the KL term, averaged over parameters.
    pub fn kl_bound(&self, sigma_h2: f64) -> Result<f64> {
        let mut total = 0.0;
        for (&mu, &sigma2) in self.mu.iter().zip(&self.sigma2) {
            total += theorem1_bound(&GaussianStats { mu, sigma2, m: self.m }, sigma_h2)?;
        }
        Ok(total / self.mu.len().max(1) as f64)
    }
}

/// Welford accumulation of gradient vectors; a non-finite entry reports the
/// offending sample index.
pub fn gradient_stats<I>(grads: I) -> Result<ParamStats>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (i, g) in grads.into_iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { index: i });
        }
        if n == 0 {
            mean = vec![0.0; g.len()];
            m2 = vec![0.0; g.len()];
        } else if g.len() != mean.len() {
            return Err(Error::LengthMismatch {
                expected: mean.len(),
                found: g.len(),
            });
        }
        n += 1;
        for ((mu, s), x) in mean.iter_mut().zip(m2.iter_mut()).zip(&g) {
            let delta = x - *mu;
            *mu += delta / n as f64;
            *s += delta * (x - *mu);
        }
    }
    if n == 0 {
        return Err(Error::EmptyDataset("gradient samples".into()));
    }
    Ok(ParamStats {
        mu: mean,
        sigma2: m2.into_iter().map(|s| (s / n as f64).max(0.0)).collect(),
        m: n,
    })
}

/// Which per-sample loss the gradient statistics are taken of.
pub enum LossSpec<'a> {
    /// KL of `F1` against the dataset labels.
    F1Kl(KlDirection),
    /// Squared error of `F2` against `y - h^w(x)`.
    F2Discrepancy(&'a WeakAnnotator),
}

/// Per-parameter gradient statistics of `loss` over every sample of `ds` at
/// the parameters of `m`.
pub fn grad_stats_params(m: &ModelTriple, ds: &Dataset, loss: &LossSpec<'_>) -> Result<ParamStats> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(ds.name().into()));
    }
    let mut grads = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples().iter().enumerate() {
        let x: Vec<f64> = s.x.iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = s.y.iter().map(|&v| f64::from(v)).collect();
        let g = match loss {
            LossSpec::F1Kl(direction) => f1_sample_grad(m, &x, &y, *direction),
            LossSpec::F2Discrepancy(a) => f2_sample_grad(m, &x, &a.predict(&s.x), &y),
        };
        match g {
            Some((_, g)) => grads.push(g),
            None => return Err(Error::NonFiniteGradient { index: i }),
        }
    }
    gradient_stats(grads)
}

/// [`grad_stats_params`] aggregated by the mean over parameters.
pub fn grad_stats(m: &ModelTriple, ds: &Dataset, loss: &LossSpec<'_>) -> Result<GaussianStats> {
    Ok(grad_stats_params(m, ds, loss)?.aggregate())
}

/// `(sigma^2 / m + mu^2) / (2 sigma_H^2)`.
pub fn theorem1_bound(stats: &GaussianStats, sigma_h2: f64) -> Result<f64> {
    if !(sigma_h2 > 0.0) {
        return Err(Error::InvalidArgument("sigma_H^2 must be positive".into()));
    }
    if stats.m == 0 || !(stats.sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("stats need m >= 1 and sigma2 >= 0".into()));
    }
    Ok((stats.sigma2 / stats.m as f64 + stats.mu * stats.mu) / (2.0 * sigma_h2))
}

/// `train_loss + 4 sqrt((kl + ln(2m / delta)) / m)`.
pub fn pac_bound(train_loss: f64, kl: f64, m: usize, delta: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pac bound needs m >= 2, got {m}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(kl >= 0.0) || !(train_loss >= 0.0) {
        return Err(Error::InvalidArgument("loss and kl must be non-negative".into()));
    }
    let m = m as f64;
    Ok(train_loss + 4.0 * libm::sqrt((kl + libm::log(2.0 * m / delta)) / m))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

/// Summed elementwise loss between two output vectors.
pub fn pointwise_loss(a: &[f64], b: &[f64], kind: LossKind) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match kind {
            LossKind::L1 => libm::fabs(x - y),
            LossKind::L2 => (x - y) * (x - y),
        })
        .sum()
}

/// Mean over `xs` of the loss between the outputs of `h1` and `h2`; 0 on no inputs.
pub fn classification_distance<X: AsRef<[f32]>>(
    h1: &dyn Classifier,
    h2: &dyn Classifier,
    xs: &[X],
    kind: LossKind,
) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter()
        .map(|x| pointwise_loss(&h1.predict(x.as_ref()), &h2.predict(x.as_ref()), kind))
        .sum::<f64>()
        / xs.len() as f64
}

/// Mean loss of `h` against the labels of `ds`.
pub fn empirical_loss(h: &dyn Classifier, ds: &Dataset, kind: LossKind) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset(ds.name().into()));
    }
    Ok(ds
        .samples()
        .iter()
        .map(|s| {
            let y: Vec<f64> = s.y.iter().map(|&v| f64::from(v)).collect();
            pointwise_loss(&h.predict(&s.x), &y, kind)
        })
        .sum::<f64>()
        / ds.len() as f64)
}

fn pairwise_distances<X: AsRef<[f32]>>(pool: &[&dyn Classifier], xs: &[X], kind: LossKind) -> Vec<f64> {
    let k = pool.len();
    let mut dist = vec![0.0; k * k];
    if xs.is_empty() {
        return dist;
    }
    for x in xs {
        let outs: Vec<Vec<f64>> = pool.iter().map(|h| h.predict(x.as_ref())).collect();
        for i in 0..k {
            for j in i + 1..k {
                let l = pointwise_loss(&outs[i], &outs[j], kind);
                dist[i * k + j] += l;
                dist[j * k + i] += l;
            }
        }
    }
    let n = xs.len() as f64;
    dist.iter_mut().for_each(|d| *d /= n);
    dist
}

/// Max over ordered pairs of the pool of `|CD_P(h1, h2) - CD_Q(h1, h2)|`.
///
/// A lower estimate of the supremum over the whole hypothesis class.
pub fn discrepancy_distance_estimate<X: AsRef<[f32]>, Y: AsRef<[f32]>>(
    xs_p: &[X],
    xs_q: &[Y],
    pool: &[&dyn Classifier],
    kind: LossKind,
) -> Result<f64> {
    if pool.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "discrepancy estimate needs at least 2 classifiers, got {}",
            pool.len()
        )));
    }
    let p = pairwise_distances(pool, xs_p, kind);
    let q = pairwise_distances(pool, xs_q, kind);
    Ok(p.iter()
        .zip(&q)
        .map(|(a, b)| libm::fabs(a - b))
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `sum_i sign_i * part_i(x)`, evaluated on demand.
pub struct ComposedClassifier<'a> {
    width: usize,
    pub parts: Vec<(Sign, &'a dyn Classifier)>,
}

impl<'a> ComposedClassifier<'a> {
    pub fn new(first: &'a dyn Classifier) -> Self {
        Self {
            width: first.output_width(),
            parts: vec![(Sign::Plus, first)],
        }
    }

    fn push(mut self, sign: Sign, h: &'a dyn Classifier) -> Result<Self> {
        if h.output_width() != self.width {
            return Err(Error::LengthMismatch {
                expected: self.width,
                found: h.output_width(),
            });
        }
        self.parts.push((sign, h));
        Ok(self)
    }

    pub fn plus(self, h: &'a dyn Classifier) -> Result<Self> {
        self.push(Sign::Plus, h)
    }

    pub fn minus(self, h: &'a dyn Classifier) -> Result<Self> {
        self.push(Sign::Minus, h)
    }
}

impl Classifier for ComposedClassifier<'_> {
    fn output_width(&self) -> usize {
        self.width
    }

    fn predict(&self, x: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for (sign, h) in &self.parts {
            let s = match sign {
                Sign::Plus => 1.0,
                Sign::Minus => -1.0,
            };
            for (o, v) in out.iter_mut().zip(h.predict(x)) {
                *o += s * v;
            }
        }
        out
    }
}

/// `h1 + h2` pointwise.
pub fn oplus<'a>(h1: &'a dyn Classifier, h2: &'a dyn Classifier) -> Result<ComposedClassifier<'a>> {
    ComposedClassifier::new(h1).plus(h2)
}

/// `h1 - h2` pointwise.
pub fn ominus<'a>(h1: &'a dyn Classifier, h2: &'a dyn Classifier) -> Result<ComposedClassifier<'a>> {
    ComposedClassifier::new(h1).minus(h2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Result {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Compare `E L(h + d, h^w + h^ot - h^w)` with `E L(h, h^w) + E L(d, h^ot - h^w)`.
pub fn theorem2_check<X: AsRef<[f32]>>(
    h: &dyn Classifier,
    d: &dyn Classifier,
    hw: &dyn Classifier,
    hot: &dyn Classifier,
    xs: &[X],
    kind: LossKind,
) -> Result<Theorem2Result> {
    let left = oplus(h, d)?;
    let right = ComposedClassifier::new(hw).plus(hot)?.minus(hw)?;
    let gap = ominus(hot, hw)?;
    let lhs = classification_distance(&left, &right, xs, kind);
    let rhs = classification_distance(h, hw, xs, kind) + classification_distance(d, &gap, xs, kind);
    Ok(Theorem2Result {
        holds: lhs <= rhs + 1e-9,
        lhs,
        rhs,
    })
}

/// Violation count for one ordering of `(h^ot, h, h^w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCase {
    /// Names from largest to smallest value.
    pub ordering: [String; 3],
    pub trials: usize,
    pub violations: usize,
}

/// `t1 * t2` for scalar outputs with `d = h^ot - h`, where
/// `t1 = h - h^w` and `t2 = d - h^ot + h^w`.
pub fn sign_product(hot: f64, h: f64, hw: f64) -> f64 {
    let d = hot - h;
    let t1 = h - hw;
    let t2 = d - hot + hw;
    t1 * t2
}

/// Draw `n_trials` random triples for each of the six orderings of
/// `(h^ot, h, h^w)` and count cases with `t1 * t2 > 0`.
pub fn sign_table_check(n_trials: usize, seed: u64) -> Result<Vec<SignCase>> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    const NAMES: [&str; 3] = ["h_ot", "h", "h_w"];
    const ORDERINGS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut rng = seed::rng(seed, "bound/sign_table");
    let mut cases = Vec::with_capacity(6);
    for order in ORDERINGS {
        let mut violations = 0;
        for _ in 0..n_trials {
            let mut v = [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ];
            v.sort_by(|a: &f64, b| b.total_cmp(a));
            // order[k] receives the k-th largest value
            let mut vals = [0.0; 3];
            for (rank, &who) in order.iter().enumerate() {
                vals[who] = v[rank];
            }
            if sign_product(vals[0], vals[1], vals[2]) > 0.0 {
                violations += 1;
            }
        }
        cases.push(SignCase {
            ordering: order.map(|i| String::from(NAMES[i])),
            trials: n_trials,
            violations,
        });
    }
    Ok(cases)
}

/// Sample-size independent part of the decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTerms {
    /// `2 L_t(h^w)`.
    pub target_weak_loss_x2: f64,
    /// `L_t(d)`.
    pub target_correction_loss: f64,
    /// `L_s(h)`.
    pub source_h_loss: f64,
    /// `L_s(h^w)`.
    pub source_weak_loss: f64,
    /// Discrepancy distance estimate between target and source inputs.
    pub discrepancy_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityTerms {
    /// `4 sqrt(KL_d / N_t)`.
    pub kl_d_term: f64,
    /// `4 sqrt(KL_h / N_s)`.
    pub kl_h_term: f64,
    /// `12 sqrt(ln(2 N_t / delta) / N_t)`.
    pub target_log_term: f64,
    /// `8 sqrt(ln(2 N_s / delta) / N_s)`.
    pub source_log_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta_terms: DeltaTerms,
    pub quantity_terms: QuantityTerms,
    pub kl_d: f64,
    pub kl_h: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub delta: f64,
    pub sigma_h2: f64,
    pub loss_kind: LossKind,
    pub total: f64,
}

impl BoundReport {
    /// Every summand of `total` by name.
    pub fn terms(&self) -> [(&'static str, f64); 9] {
        let d = &self.delta_terms;
        let q = &self.quantity_terms;
        [
            ("target_weak_loss_x2", d.target_weak_loss_x2),
            ("target_correction_loss", d.target_correction_loss),
            ("source_h_loss", d.source_h_loss),
            ("source_weak_loss", d.source_weak_loss),
            ("discrepancy_distance", d.discrepancy_distance),
            ("kl_d_term", q.kl_d_term),
            ("kl_h_term", q.kl_h_term),
            ("target_log_term", q.target_log_term),
            ("source_log_term", q.source_log_term),
        ]
    }
}

/// `c * sqrt(ln(2 n / delta) / n)`.
pub fn log_term(c: f64, n: usize, delta: f64) -> f64 {
    let n = n as f64;
    c * libm::sqrt(libm::log(2.0 * n / delta) / n)
}

/// `4 sqrt(kl / n)`.
pub fn kl_term(kl: f64, n: usize) -> f64 {
    4.0 * libm::sqrt(kl / n as f64)
}

/// Constituents of a bound evaluation; every `None` is reported as missing.
#[derive(Default)]
pub struct BoundInputs<'a> {
    /// Source-trained hypothesis `h`.
    pub h: Option<&'a dyn Classifier>,
    /// Correction classifier `d`, predicting `y - h^w(x)`.
    pub d: Option<&'a dyn Classifier>,
    pub annotator: Option<&'a dyn Classifier>,
    /// Source samples with the labels `h` is scored against.
    pub source: Option<&'a Dataset>,
    /// Labeled target samples.
    pub target: Option<&'a Dataset>,
    pub kl_h: Option<f64>,
    pub kl_d: Option<f64>,
    pub pool: Vec<&'a dyn Classifier>,
    pub delta: f64,
    pub sigma_h2: f64,
    pub loss_kind: LossKind,
}

pub fn bound_report(inputs: &BoundInputs<'_>) -> Result<BoundReport> {
    let mut missing = Vec::new();
    let mut need = |ok: bool, name: &str| {
        if !ok {
            missing.push(String::from(name));
        }
    };
    need(inputs.h.is_some(), "h");
    need(inputs.d.is_some(), "d");
    need(inputs.annotator.is_some(), "annotator");
    need(inputs.source.is_some_and(|s| !s.is_empty()), "source");
    need(inputs.target.is_some_and(|t| !t.is_empty()), "target");
    need(inputs.kl_h.is_some(), "kl_h");
    need(inputs.kl_d.is_some(), "kl_d");
    need(inputs.pool.len() >= 2, "pool");
    if !missing.is_empty() {
        return Err(Error::MissingTerms(missing));
    }
    let (h, d, hw) = (inputs.h.unwrap(), inputs.d.unwrap(), inputs.annotator.unwrap());
    let (source, target) = (inputs.source.unwrap(), inputs.target.unwrap());
    let (kl_h, kl_d) = (inputs.kl_h.unwrap(), inputs.kl_d.unwrap());
    if !(inputs.delta > 0.0 && inputs.delta <= 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1]".into()));
    }
    let kind = inputs.loss_kind;
    let corrected = oplus(hw, d)?;
    let delta_terms = DeltaTerms {
        target_weak_loss_x2: 2.0 * empirical_loss(hw, target, kind)?,
        target_correction_loss: empirical_loss(&corrected, target, kind)?,
        source_h_loss: empirical_loss(h, source, kind)?,
        source_weak_loss: empirical_loss(hw, source, kind)?,
        discrepancy_distance: discrepancy_distance_estimate(
            target.samples(),
            source.samples(),
            &inputs.pool,
            kind,
        )?,
    };
    let (ns, nt) = (source.len(), target.len());
    let quantity_terms = QuantityTerms {
        kl_d_term: kl_term(kl_d, nt),
        kl_h_term: kl_term(kl_h, ns),
        target_log_term: log_term(12.0, nt, inputs.delta),
        source_log_term: log_term(8.0, ns, inputs.delta),
    };
    let mut report = BoundReport {
        delta_terms,
        quantity_terms,
        kl_d,
        kl_h,
        n_source: ns,
        n_target: nt,
        delta: inputs.delta,
        sigma_h2: inputs.sigma_h2,
        loss_kind: kind,
        total: 0.0,
    };
    report.total = report.terms().iter().map(|(_, v)| v).sum();
    Ok(report)
}

/// Default size of the classifier pool behind the discrepancy estimate.
pub const DEFAULT_POOL_SIZE: usize = 8;

/// Evaluate the decomposition for a finished pipeline run.
///
/// `h` is the stage-1 `F1`, `d` the stage-2 correction head, and both KL
/// terms are taken at the initial parameters rebuilt from the run seed:
/// `KL_h` from `F1`'s loss on weak-labeled source, `KL_d` from the
/// correction loss on labeled target. The pool holds the stage-1 and final
/// `F1` plus freshly initialised ones.
pub fn bound_report_for_run(
    run: &WalRun,
    source: &Dataset,
    target: &Dataset,
    annotator: &WeakAnnotator,
    cfg: &TrainConfig,
    pool_size: usize,
    kind: LossKind,
) -> Result<BoundReport> {
    let hw = effective_annotator(annotator, cfg);
    let prior = ModelTriple::new(
        cfg.arch.clone(),
        source.feature_dim(),
        source.num_classes(),
        initial_model_seed(cfg),
    )?;
    let weak_source = crate::annotate::annotate_dataset(&hw, source)?;
    let kl_h = grad_stats_params(&prior, &weak_source, &LossSpec::F1Kl(cfg.kl_direction))?.kl_bound(cfg.sigma_h2)?;
    let kl_d = grad_stats_params(&prior, target, &LossSpec::F2Discrepancy(&hw))?.kl_bound(cfg.sigma_h2)?;

    let stage2 = &run.stage2;
    let d = FnClassifier::new(stage2.num_classes, |x: &[f32]| {
        stage2
            .f2_forward(x, &hw.predict(x))
            .expect("shapes checked when the run was built")
    });
    let h = run.stage1.f1();
    let fin = run.model.f1();
    let extra: Vec<ModelTriple> = (0..pool_size.saturating_sub(2))
        .map(|i| prior.reinitialize(seed::derive_indexed(cfg.seed, "bound/pool", i as u64)))
        .collect();
    let extra_f1: Vec<_> = extra.iter().map(ModelTriple::f1).collect();
    let mut pool: Vec<&dyn Classifier> = vec![&h, &fin];
    pool.extend(extra_f1.iter().map(|c| c as &dyn Classifier));
    pool.truncate(pool_size.max(2));

    bound_report(&BoundInputs {
        h: Some(&h),
        d: Some(&d),
        annotator: Some(&hw),
        source: Some(source),
        target: Some(target),
        kl_h: Some(kl_h),
        kl_d: Some(kl_d),
        pool,
        delta: cfg.delta,
        sigma_h2: cfg.sigma_h2,
        loss_kind: kind,
    })
}

/// Random classifier with a fixed output per hashed input, for property checks.
pub fn random_lookup_classifier(width: usize, seed: u64, scale: f64) -> impl Classifier {
    FnClassifier::new(width, move |x: &[f32]| {
        let mut rng = crate::seed::rng(crate::seed::hash_features(x, seed), "bound/random");
        (0..width).map(|_| rng.random_range(-scale..scale)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kl_values() {
        assert_eq!(gaussian_kl(0.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((gaussian_kl(1.0, 1.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let v = gaussian_kl(0.0, 2.0, 0.0, 1.0).unwrap();
        assert!((v - (0.5f64.ln() + 2.0 - 0.5)).abs() < 1e-15);
        assert!(gaussian_kl(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn theorem1_and_pac_values() {
        let s = GaussianStats {
            mu: 0.1,
            sigma2: 1.0,
            m: 100,
        };
        assert!((theorem1_bound(&s, 1.0).unwrap() - 0.01).abs() < 1e-15);
        let v = pac_bound(0.0, 0.0, 2, 1.0).unwrap();
        assert!((v - 4.0 * (4f64.ln() / 2.0).sqrt()).abs() < 1e-12);
        assert!((v - 3.3302).abs() < 1e-4);
        assert!(pac_bound(0.0, 0.0, 1, 0.5).is_err());
        assert!(pac_bound(0.0, 0.0, 2, 2.0).is_err());
    }

    #[test]
    fn gradient_stats_hand_values() {
        let s = gradient_stats(vec![vec![1.0], vec![2.0], vec![6.0]]).unwrap();
        assert!((s.mu[0] - 3.0).abs() < 1e-15);
        assert!((s.sigma2[0] - 14.0 / 3.0).abs() < 1e-12);
        let bad = gradient_stats(vec![vec![1.0], vec![f64::NAN]]);
        assert_eq!(bad, Err(Error::NonFiniteGradient { index: 1 }));
    }

    #[test]
    fn sign_table_hand_case() {
        assert_eq!(sign_product(3.0, 2.0, 1.0), -1.0);
        assert_eq!(sign_product(3.0, 1.0, 1.0), 0.0);
        let cases = sign_table_check(100, 0).unwrap();
        assert_eq!(cases.len(), 6);
        assert!(cases.iter().all(|c| c.violations == 0));
    }

    #[test]
    fn constant_classifier_distance() {
        let a = FnClassifier::new(2, |_: &[f32]| vec![1.0, 0.0]);
        let b = FnClassifier::new(2, |_: &[f32]| vec![0.0, 1.0]);
        let xs = [[0.0f32], [1.0]];
        assert_eq!(classification_distance(&a, &b, &xs, LossKind::L1), 2.0);
        assert_eq!(classification_distance(&a, &a, &xs, LossKind::L2), 0.0);
    }

    #[test]
    fn missing_terms_are_listed() {
        let err = bound_report(&BoundInputs {
            delta: 0.05,
            sigma_h2: 1.0,
            ..BoundInputs::default()
        })
        .unwrap_err();
        match err {
            Error::MissingTerms(names) => {
                assert!(names.contains(&String::from("kl_d")));
                assert_eq!(names.len(), 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
