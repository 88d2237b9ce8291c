//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the implementation on the path it checks.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wal_core::bound::{gaussian_kl, pac_bound, theorem1_bound, GaussianStats};
use wal_core::losses::{
    cmmd_loss, cmmd_loss_grad, combined_loss_logits_grad, discrepancy_loss, discrepancy_loss_grad,
    kl_loss, kl_loss_logits_grad, KlDirection,
};
use wal_core::nets::{ArchConfig, CorrectionInput, ModelTriple};

pub const ORACLE_REL_TOL: f64 = 1e-9;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Below this absolute difference two gradient entries always agree.
pub const GRAD_ABS_FLOOR: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(|a|, |b|)`, or the absolute difference when both are
/// within 1e-12 of zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

// ---- closed-form oracles ----

fn normal_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// KL between two normals by composite Simpson quadrature of `p ln(p/q)`.
pub fn gaussian_kl_quadrature(mu1: f64, s1: f64, mu2: f64, s2: f64) -> f64 {
    let (a, b) = (mu1 - 16.0 * s1, mu1 + 16.0 * s1);
    let n = 200_000;
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let lp = normal_log_pdf(x, mu1, s1);
        lp.exp() * (lp - normal_log_pdf(x, mu2, s2))
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn theorem1_oracle(mu: f64, sigma2: f64, m: usize, sigma_h2: f64) -> f64 {
    let m = m as f64;
    (sigma2 + m * mu * mu) / (2.0 * m * sigma_h2)
}

pub fn pac_oracle(train: f64, kl: f64, m: usize, delta: f64) -> f64 {
    let m = m as f64;
    train + 4.0 * ((kl + 2f64.ln() + m.ln() - delta.ln()) / m).sqrt()
}

pub fn clamp_oracle(t: &[f64]) -> Vec<f64> {
    let c: Vec<f64> = t
        .iter()
        .map(|&v| v.clamp(1e-8, 1.0))
        .collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

/// `sum p ln p - sum p ln t`, with `0 ln 0 = 0`.
pub fn kl_oracle(p: &[f64], t: &[f64]) -> f64 {
    let t = clamp_oracle(t);
    let ent: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    let cross: f64 = p.iter().zip(&t).map(|(a, b)| a * b.ln()).sum();
    ent - cross
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classified MMD through the pairwise (Gram) expansion of each squared
/// mean distance.
pub fn cmmd_gram_oracle(source: &[(Vec<f64>, usize)], target: &[(Vec<f64>, usize)], m: usize) -> f64 {
    let mut total = 0.0;
    let mut shared = 0;
    for c in 0..m {
        let s: Vec<&Vec<f64>> = source.iter().filter(|(_, k)| *k == c).map(|(v, _)| v).collect();
        let t: Vec<&Vec<f64>> = target.iter().filter(|(_, k)| *k == c).map(|(v, _)| v).collect();
        if s.is_empty() || t.is_empty() {
            continue;
        }
        let (ns, nt) = (s.len() as f64, t.len() as f64);
        let ss: f64 = s.iter().flat_map(|a| s.iter().map(move |b| dot(a, b))).sum();
        let tt: f64 = t.iter().flat_map(|a| t.iter().map(move |b| dot(a, b))).sum();
        let st: f64 = s.iter().flat_map(|a| t.iter().map(move |b| dot(a, b))).sum();
        let sq = ss / (ns * ns) + tt / (nt * nt) - 2.0 * st / (ns * nt);
        total += sq.max(0.0).sqrt();
        shared += 1;
    }
    if shared == 0 {
        0.0
    } else {
        total / shared as f64
    }
}

/// Classified MMD by direct per-class averaging.
pub fn cmmd_direct_oracle(source: &[(Vec<f64>, usize)], target: &[(Vec<f64>, usize)], m: usize) -> f64 {
    let mean = |rows: &[&Vec<f64>]| -> Vec<f64> {
        let w = rows[0].len();
        (0..w)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    let mut norms = Vec::new();
    for c in 0..m {
        let s: Vec<&Vec<f64>> = source.iter().filter(|(_, k)| *k == c).map(|(v, _)| v).collect();
        let t: Vec<&Vec<f64>> = target.iter().filter(|(_, k)| *k == c).map(|(v, _)| v).collect();
        if s.is_empty() || t.is_empty() {
            continue;
        }
        let (ms, mt) = (mean(&s), mean(&t));
        norms.push(ms.iter().zip(&mt).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    if norms.is_empty() {
        0.0
    } else {
        norms.iter().sum::<f64>() / norms.len() as f64
    }
}

/// `|c|^2 + |y - w|^2 - 2 c.(y - w)`.
pub fn discrepancy_oracle(c: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let r: Vec<f64> = y.iter().zip(w).map(|(a, b)| a - b).collect();
    dot(c, c) + dot(&r, &r) - 2.0 * dot(c, &r)
}

pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn random_simplex(r: &mut impl Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

// ---- formula oracle suite ----

/// Outcome of comparing one function against its oracle on fixed instances.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst_rel_err: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.instances >= 10 && self.worst_rel_err <= ORACLE_REL_TOL
    }
}

fn check(name: &'static str, pairs: Vec<(f64, f64)>) -> OracleCheck {
    OracleCheck {
        name,
        instances: pairs.len(),
        worst_rel_err: pairs.iter().map(|&(a, b)| rel_err(a, b)).fold(0.0, f64::max),
    }
}

pub fn formula_oracle_suite() -> Vec<OracleCheck> {
    let mut r = rng(0x0AC1E);
    let mut out = Vec::new();

    let mut g = vec![(0.0, 1.0, 0.0, 1.0), (1.0, 1.0, 0.0, 1.0), (0.0, 2.0, 0.0, 1.0)];
    while g.len() < 12 {
        g.push((
            r.random_range(-2.0..2.0),
            r.random_range(0.3..2.0),
            r.random_range(-2.0..2.0),
            r.random_range(0.3..2.0),
        ));
    }
    out.push(check(
        "gaussian_kl",
        g.iter()
            .map(|&(a, b, c, d)| (gaussian_kl(a, b, c, d).unwrap(), gaussian_kl_quadrature(a, b, c, d)))
            .collect(),
    ));

    let mut t = vec![(0.0, 0.0, 1usize, 1.0), (0.1, 1.0, 100, 1.0)];
    while t.len() < 12 {
        t.push((
            r.random_range(-1.0..1.0),
            r.random_range(0.0..4.0),
            r.random_range(1..10_000),
            r.random_range(0.1..3.0),
        ));
    }
    out.push(check(
        "theorem1_bound",
        t.iter()
            .map(|&(mu, s2, m, h2)| {
                let v = theorem1_bound(&GaussianStats { mu, sigma2: s2, m }, h2).unwrap();
                (v, theorem1_oracle(mu, s2, m, h2))
            })
            .collect(),
    ));

    let mut p = vec![(0.0, 0.0, 2usize, 1.0), (0.25, 1.5, 10, 0.05)];
    while p.len() < 12 {
        p.push((
            r.random_range(0.0..1.0),
            r.random_range(0.0..5.0),
            r.random_range(2..100_000),
            r.random_range(0.001..1.0),
        ));
    }
    out.push(check(
        "pac_bound",
        p.iter()
            .map(|&(l, kl, m, d)| (pac_bound(l, kl, m, d).unwrap(), pac_oracle(l, kl, m, d)))
            .collect(),
    ));

    let mut k = vec![(vec![0.5, 0.5], vec![0.75, 0.25]), (vec![0.2, 0.8], vec![1.3, -0.3])];
    while k.len() < 12 {
        let m = r.random_range(2..8);
        k.push((random_simplex(&mut r, m), random_simplex(&mut r, m)));
    }
    out.push(check(
        "kl_loss",
        k.iter()
            .map(|(a, b)| (kl_loss(a, b).unwrap(), kl_oracle(a, b)))
            .collect(),
    ));

    type Batch = Vec<(Vec<f64>, usize)>;
    let mut c: Vec<(Batch, Batch, usize)> = vec![
        (vec![(vec![1.0, 0.0], 0)], vec![(vec![0.0, 0.0], 0)], 1),
        (vec![(vec![0.3, 0.7], 0)], vec![(vec![0.3, 0.7], 1)], 2),
    ];
    while c.len() < 12 {
        let m = r.random_range(2..6);
        let mut side = |n: usize| -> Vec<(Vec<f64>, usize)> {
            (0..n).map(|_| (random_simplex(&mut r, m), r.random_range(0..m))).collect()
        };
        let (s, t) = (side(12), side(9));
        c.push((s, t, m));
    }
    out.push(check(
        "cmmd_loss",
        c.iter()
            .map(|(s, t, m)| (cmmd_loss(s, t, *m).unwrap(), cmmd_gram_oracle(s, t, *m)))
            .collect(),
    ));

    let mut d = vec![
        (vec![0.0, 0.0], vec![1.0, 0.0], vec![0.6, 0.4]),
        (vec![0.4, -0.4], vec![1.0, 0.0], vec![0.6, 0.4]),
    ];
    while d.len() < 12 {
        let m = r.random_range(2..8);
        let y = wal_core::data::one_hot(r.random_range(0..m), m)
            .into_iter()
            .map(f64::from)
            .collect();
        let corr = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        d.push((corr, y, random_simplex(&mut r, m)));
    }
    out.push(check(
        "discrepancy_loss",
        d.iter()
            .map(|(c, y, w)| (discrepancy_loss(c, y, w).unwrap(), discrepancy_oracle(c, y, w)))
            .collect(),
    ));
    out
}

// ---- gradient suite ----

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub trials: usize,
    /// Entries whose absolute error exceeds the floor and relative error the tolerance.
    pub mismatches: usize,
    pub worst_rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

#[derive(Default)]
struct GradTally {
    mismatches: usize,
    worst: f64,
}

impl GradTally {
    fn compare(&mut self, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.iter().zip(numeric) {
            let abs = (a - n).abs();
            if abs <= GRAD_ABS_FLOOR {
                continue;
            }
            let rel = rel_err(a, n);
            self.worst = self.worst.max(rel);
            if rel > GRAD_REL_TOL {
                self.mismatches += 1;
            }
        }
    }

    fn finish(self, name: &'static str, trials: usize) -> GradCheck {
        GradCheck {
            name,
            trials,
            mismatches: self.mismatches,
            worst_rel_err: self.worst,
        }
    }
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rows_of(flat: &[f64], width: usize, classes: &[usize]) -> Vec<(Vec<f64>, usize)> {
    flat.chunks(width).zip(classes).map(|(r, &c)| (r.to_vec(), c)).collect()
}

/// Random 5-class instances of every loss, `trials` each.
pub fn gradient_suite(trials: usize, seed: u64) -> Vec<GradCheck> {
    const M: usize = 5;
    let mut r = rng(seed);
    let mut out = Vec::new();

    for (name, dir) in [
        ("kl_loss (prediction to target)", KlDirection::PredictionToTarget),
        ("kl_loss (target to prediction)", KlDirection::TargetToPrediction),
    ] {
        let mut tally = GradTally::default();
        for _ in 0..trials {
            let z: Vec<f64> = (0..M).map(|_| r.random_range(-3.0..3.0)).collect();
            let t = random_simplex(&mut r, M);
            let (_, g) = kl_loss_logits_grad(&z, &t, dir).unwrap();
            let num = central_diff(&z, |z| {
                let p = softmax_oracle(z);
                match dir {
                    KlDirection::PredictionToTarget => kl_oracle(&p, &t),
                    KlDirection::TargetToPrediction => kl_oracle(&clamp_oracle(&t), &p),
                }
            });
            tally.compare(&g, &num);
        }
        out.push(tally.finish(name, trials));
    }

    let mut tally = GradTally::default();
    for _ in 0..trials {
        let (ns, nt) = (r.random_range(2..10), r.random_range(2..10));
        let s: Vec<f64> = (0..ns * M).map(|_| r.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..nt * M).map(|_| r.random_range(0.0..1.0)).collect();
        let cs: Vec<usize> = (0..ns).map(|_| r.random_range(0..M)).collect();
        let ct: Vec<usize> = (0..nt).map(|_| r.random_range(0..M)).collect();
        let (_, gs, gt) = cmmd_loss_grad(&s, &cs, &t, &ct, M, M);
        let num_s = central_diff(&s, |s| cmmd_direct_oracle(&rows_of(s, M, &cs), &rows_of(&t, M, &ct), M));
        let num_t = central_diff(&t, |t| cmmd_direct_oracle(&rows_of(&s, M, &cs), &rows_of(t, M, &ct), M));
        tally.compare(&gs, &num_s);
        tally.compare(&gt, &num_t);
    }
    out.push(tally.finish("cmmd_loss", trials));

    let mut tally = GradTally::default();
    for _ in 0..trials {
        let n = r.random_range(1..6);
        let c: Vec<f64> = (0..n * M).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .flat_map(|_| {
                let k = r.random_range(0..M);
                (0..M).map(move |j| if j == k { 1.0 } else { 0.0 })
            })
            .collect();
        let w: Vec<f64> = (0..n).flat_map(|_| random_simplex(&mut r, M)).collect();
        let (_, g) = discrepancy_loss_grad(&c, &y, &w, M).unwrap();
        let num = central_diff(&c, |c| {
            (0..n)
                .map(|i| {
                    let s = i * M..(i + 1) * M;
                    discrepancy_oracle(&c[s.clone()], &y[s.clone()], &w[s])
                })
                .sum::<f64>()
                / n as f64
        });
        tally.compare(&g, &num);
    }
    out.push(tally.finish("discrepancy_loss", trials));

    let mut tally = GradTally::default();
    for _ in 0..trials {
        let (ns, nt) = (r.random_range(2..8), r.random_range(2..8));
        let rows = ns + nt;
        let z: Vec<f64> = (0..rows * M).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..rows).flat_map(|_| random_simplex(&mut r, M)).collect();
        let cls: Vec<usize> = (0..rows).map(|_| r.random_range(0..M)).collect();
        let alpha = r.random_range(0.0..2.0);
        let (_, g) =
            combined_loss_logits_grad(&z, &t, &cls, ns, M, alpha, KlDirection::PredictionToTarget).unwrap();
        let num = central_diff(&z, |z| {
            let probs: Vec<Vec<f64>> = z.chunks(M).map(softmax_oracle).collect();
            let kl = probs
                .iter()
                .zip(t.chunks(M))
                .map(|(p, t)| kl_oracle(p, t))
                .sum::<f64>()
                / rows as f64;
            let tagged: Vec<(Vec<f64>, usize)> = probs.into_iter().zip(cls.iter().copied()).collect();
            kl + alpha * cmmd_direct_oracle(&tagged[..ns], &tagged[ns..], M)
        });
        tally.compare(&g, &num);
    }
    out.push(tally.finish("combined_loss", trials));
    out
}

/// `F2` output gradient w.r.t. every `phi2` parameter against central
/// differences, on a 3-class toy triple.
pub fn f2_phi2_gradient_check(trials: usize, seed: u64) -> GradCheck {
    const M: usize = 3;
    let mut r = rng(seed);
    let arch = ArchConfig {
        phi0_hidden: vec![5],
        feature_width: 4,
        phi1_hidden: vec![4, 4],
        phi2_hidden: vec![6],
        correction_input: CorrectionInput::WeakAndFeature,
    };
    let mut tally = GradTally::default();
    for trial in 0..trials {
        let model = ModelTriple::new(arch.clone(), 4, M, seed ^ trial as u64).unwrap();
        let x: Vec<f32> = (0..4).map(|_| r.random_range(-2.0f32..2.0)).collect();
        let yw = random_simplex(&mut r, M);
        let k = r.random_range(0..M);

        let xs: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let feat = model.phi0.forward(&xs, 1);
        let input = model.phi2_input(&yw, &feat, 1);
        let cache = model.phi2.forward_cached(&input, 1);
        let mut d_out = vec![0.0; M];
        d_out[k] = 1.0;
        let (grad, _) = model.phi2.backward(&cache, &d_out, false);
        let analytic = grad.flatten();

        let flat = model.phi2.flatten();
        let num = central_diff(&flat, |p| {
            let mut m = model.clone();
            m.phi2.load_flat(p);
            m.f2_forward(&x, &yw).unwrap()[k]
        });
        tally.compare(&analytic, &num);
    }
    tally.finish("f2 output w.r.t. phi2", trials)
}
