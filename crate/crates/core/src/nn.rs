//! Dense layers, multilayer perceptrons with hand-written backprop, and Adam.
//!
//! Activations are row-major `batch x width` matrices of `f64`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Fully connected layer, `y = W x + b` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Dense {
    /// Fan-in scaled uniform init: entries drawn from `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let mut draw = || rng.random_range(-bound..bound);
        let weight = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        let mut out = vec![0.0; batch * self.out_dim];
        for (xr, orow) in x
            .chunks_exact(self.in_dim)
            .zip(out.chunks_exact_mut(self.out_dim))
        {
            for (o, w) in self.weight.chunks_exact(self.in_dim).enumerate() {
                orow[o] = self.bias[o] + dot(w, xr);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        grad: &mut DenseGrad,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let batch = dy.len() / self.out_dim;
        let mut dx = if want_dx {
            Some(vec![0.0; batch * self.in_dim])
        } else {
            None
        };
        for r in 0..batch {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let dyr = &dy[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                axpy(
                    g,
                    xr,
                    &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim],
                );
                if let Some(dx) = dx.as_mut() {
                    axpy(
                        g,
                        &self.weight[o * self.in_dim..(o + 1) * self.in_dim],
                        &mut dx[r * self.in_dim..(r + 1) * self.in_dim],
                    );
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Stack of dense layers with ReLU between them.
///
/// The last layer is linear unless `relu_output` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_output: bool,
}

/// Activations kept from a forward pass: `acts[l]` is the input of layer `l`
/// and `acts[layers.len()]` is the output.
#[derive(Clone, Debug)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
    pub batch: usize,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrad {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new(widths: &[usize], relu_output: bool, rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        Self {
            layers,
            relu_output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn set_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a, batch);
            if self.activates(l) {
                relu_in_place(&mut a);
            }
        }
        a
    }

    pub fn forward_cached(&self, x: &[f64], batch: usize) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.forward(&acts[l], batch);
            if self.activates(l) {
                relu_in_place(&mut a);
            }
            acts.push(a);
        }
        MlpCache { acts, batch }
    }

    /// Backpropagate `d_out` (gradient w.r.t. the output) through the cached
    /// pass. Returns parameter gradients and, if asked, the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &[f64],
        want_dx: bool,
    ) -> (MlpGrad, Option<Vec<f64>>) {
        let mut grad = self.zero_grad();
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            if self.activates(l) {
                for (d, &a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let need = l > 0 || want_dx;
            match self.layers[l].backward(&cache.acts[l], &delta, &mut grad.layers[l], need) {
                Some(dx) => delta = dx,
                None => delta.clear(),
            }
        }
        let dx = if want_dx { Some(delta) } else { None };
        (grad, dx)
    }

    /// Parameters flattened layer by layer as (weight, bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`Mlp::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

fn relu_in_place(a: &mut [f64]) {
    for v in a {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Row-wise softmax of a `batch x width` matrix.
pub fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(width) {
        softmax_in_place(row);
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Pull a gradient w.r.t. softmax probabilities back to the logits:
/// `dz_j = p_j (g_j - sum_c p_c g_c)`.
pub fn softmax_backward(p: &[f64], dp: &[f64], width: usize) -> Vec<f64> {
    let mut dz = vec![0.0; p.len()];
    for ((pr, gr), zr) in p
        .chunks_exact(width)
        .zip(dp.chunks_exact(width))
        .zip(dz.chunks_exact_mut(width))
    {
        let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..width {
            zr[j] = pr[j] * (gr[j] - inner);
        }
    }
    dz
}

/// Adam with bias correction, one instance per trainable component.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grad: &MlpGrad) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        let mut off = 0;
        for (layer, g) in mlp.layers.iter_mut().zip(&grad.layers) {
            for (p, gv) in layer
                .weight
                .iter_mut()
                .zip(&g.weight)
                .chain(layer.bias.iter_mut().zip(&g.bias))
            {
                let m = &mut self.m[off];
                let v = &mut self.v[off];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= self.lr * mh / (libm::sqrt(vh) + self.eps);
                off += 1;
            }
        }
    }
}
