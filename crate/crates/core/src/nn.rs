//! Minimal explicit-gradient building blocks: 3×3/1×1 convolutions via
//! im2col and GEMM, SiLU, 2×2 average pooling, nearest upsampling, dense
//! layers and first-order optimizers. All parameters of a network live in a
//! single flat vector; layers hold offsets into it.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

/// Channel-major activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor shape mismatch");
        Self { c, h, w, data }
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct ParamAlloc {
    pub len: usize,
}

impl ParamAlloc {
    fn take(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds row/column-major layouts of the
    // given slices, checked by the callers' shape arithmetic.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square convolution with stride 1 and "same" zero padding (k = 1 or 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub offset: usize,
}

impl Conv {
    pub fn new(alloc: &mut ParamAlloc, in_c: usize, out_c: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "odd kernel");
        let offset = alloc.take(out_c * in_c * k * k + out_c);
        Self {
            in_c,
            out_c,
            k,
            offset,
        }
    }

    fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn n_params(&self) -> usize {
        self.out_c * self.fan_in() + self.out_c
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng, gain: f64) {
        let std = gain * (1.0 / self.fan_in() as f64).sqrt();
        let nw = self.out_c * self.fan_in();
        for p in &mut params[self.offset..self.offset + nw] {
            let z: f64 = StandardNormal.sample(rng);
            *p = std * z;
        }
        params[self.offset + nw..self.offset + self.n_params()].fill(0.0);
    }

    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (h, w, k) = (x.h, x.w, self.k);
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut cols = vec![0.0; self.fan_in() * hw];
        for ci in 0..self.in_c {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for r in 0..h {
                        let sr = r as isize + dy;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sr as usize * w..(sr as usize + 1) * w];
                        let c0 = (-dx).max(0) as usize;
                        let c1 = (w as isize - dx.max(0)) as usize;
                        for c in c0..c1 {
                            dst[r * w + c] = src_row[(c as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Tensor {
        let k = self.k;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut out = Tensor::zeros(self.in_c, h, w);
        for ci in 0..self.in_c {
            let plane = &mut out.data[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for r in 0..h {
                        let sr = r as isize + dy;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let c0 = (-dx).max(0) as usize;
                        let c1 = (w as isize - dx.max(0)) as usize;
                        for c in c0..c1 {
                            plane[sr as usize * w + (c as isize + dx) as usize] += src[r * w + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the output and the column buffer needed by `backward`.
    pub fn forward(&self, params: &[f64], x: &Tensor) -> (Tensor, Vec<f64>) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let hw = x.h * x.w;
        let fan = self.fan_in();
        let cols = if self.k == 1 {
            x.data.clone()
        } else {
            self.im2col(x)
        };
        let wts = &params[self.offset..self.offset + self.out_c * fan];
        let bias = &params[self.offset + self.out_c * fan..self.offset + self.n_params()];
        let mut y = Tensor::zeros(self.out_c, x.h, x.w);
        for (o, b) in bias.iter().enumerate() {
            y.data[o * hw..(o + 1) * hw].fill(*b);
        }
        gemm(
            self.out_c,
            fan,
            hw,
            wts,
            (fan as isize, 1),
            &cols,
            (hw as isize, 1),
            1.0,
            &mut y.data,
        );
        (y, cols)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        params: &[f64],
        cols: &[f64],
        dy: &Tensor,
        grad: &mut [f64],
        need_dx: bool,
    ) -> Option<Tensor> {
        let hw = dy.h * dy.w;
        let fan = self.fan_in();
        let nw = self.out_c * fan;
        {
            let gw = &mut grad[self.offset..self.offset + nw];
            gemm(
                self.out_c,
                hw,
                fan,
                &dy.data,
                (hw as isize, 1),
                cols,
                (1, hw as isize),
                1.0,
                gw,
            );
        }
        for o in 0..self.out_c {
            grad[self.offset + nw + o] += dy.data[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        if !need_dx {
            return None;
        }
        let wts = &params[self.offset..self.offset + nw];
        let mut dcols = vec![0.0; fan * hw];
        gemm(
            fan,
            self.out_c,
            hw,
            wts,
            (1, fan as isize),
            &dy.data,
            (hw as isize, 1),
            0.0,
            &mut dcols,
        );
        if self.k == 1 {
            Some(Tensor::from_data(self.in_c, dy.h, dy.w, dcols))
        } else {
            Some(self.col2im(&dcols, dy.h, dy.w))
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn new(alloc: &mut ParamAlloc, inputs: usize, outputs: usize) -> Self {
        let offset = alloc.take(inputs * outputs + outputs);
        Self {
            inputs,
            outputs,
            offset,
        }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng, gain: f64) {
        let std = gain / (self.inputs as f64).sqrt();
        let nw = self.inputs * self.outputs;
        for p in &mut params[self.offset..self.offset + nw] {
            let z: f64 = StandardNormal.sample(rng);
            *p = std * z;
        }
        params[self.offset + nw..self.offset + nw + self.outputs].fill(0.0);
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let nw = self.inputs * self.outputs;
        (0..self.outputs)
            .map(|o| {
                let row =
                    &params[self.offset + o * self.inputs..self.offset + (o + 1) * self.inputs];
                params[self.offset + nw + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let nw = self.inputs * self.outputs;
        let mut dx = vec![0.0; self.inputs];
        for (o, &g) in dy.iter().enumerate() {
            let base = self.offset + o * self.inputs;
            for i in 0..self.inputs {
                grad[base + i] += g * x[i];
                dx[i] += g * params[base + i];
            }
            grad[self.offset + nw + o] += g;
        }
        dx
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: &Tensor) -> Tensor {
    Tensor::from_data(
        x.c,
        x.h,
        x.w,
        x.data.iter().map(|&v| v * sigmoid(v)).collect(),
    )
}

/// Gradient of SiLU given its pre-activation input.
pub fn silu_backward(pre: &Tensor, dy: &Tensor) -> Tensor {
    let data = pre
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * s * (1.0 + x * (1.0 - s))
        })
        .collect();
    Tensor::from_data(pre.c, pre.h, pre.w, data)
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for ch in 0..x.c {
        let src = x.plane(ch);
        for r in 0..h2 {
            for c in 0..w2 {
                let i = 2 * r * x.w + 2 * c;
                out.data[(ch * h2 + r) * w2 + c] =
                    0.25 * (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let mut dx = Tensor::zeros(dy.c, h, w);
    for ch in 0..dy.c {
        for r in 0..h {
            for c in 0..w {
                dx.data[(ch * h + r) * w + c] = 0.25 * dy.data[(ch * dy.h + r / 2) * dy.w + c / 2];
            }
        }
    }
    dx
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for ch in 0..x.c {
        for r in 0..h {
            for c in 0..w {
                out.data[(ch * h + r) * w + c] = x.data[(ch * x.h + r / 2) * x.w + c / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h2, w2) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.c, h2, w2);
    for ch in 0..dy.c {
        for r in 0..dy.h {
            for c in 0..dy.w {
                dx.data[(ch * h2 + r / 2) * w2 + c / 2] += dy.data[(ch * dy.h + r) * dy.w + c];
            }
        }
    }
    dx
}

pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let n = (x.h * x.w) as f64;
    (0..x.c)
        .map(|ch| x.plane(ch).iter().sum::<f64>() / n)
        .collect()
}

pub fn global_avg_pool_backward(dy: &[f64], h: usize, w: usize) -> Tensor {
    let n = (h * w) as f64;
    let mut data = Vec::with_capacity(dy.len() * h * w);
    for g in dy {
        data.extend(std::iter::repeat_n(g / n, h * w));
    }
    Tensor::from_data(dy.len(), h, w, data)
}

/// Averages each channel over a `g x g` grid of equal cells; the output is
/// channel-major, then cell row, then cell column. `g = 1` is global pooling.
pub fn grid_avg_pool(x: &Tensor, g: usize) -> Vec<f64> {
    let (ch, cw) = (x.h / g, x.w / g);
    let n = (ch * cw) as f64;
    let mut out = vec![0.0; x.c * g * g];
    for c in 0..x.c {
        let plane = x.plane(c);
        for r in 0..x.h {
            for col in 0..x.w {
                out[(c * g + r / ch) * g + col / cw] += plane[r * x.w + col];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

pub fn grid_avg_pool_backward(dy: &[f64], c: usize, h: usize, w: usize, g: usize) -> Tensor {
    let (ch, cw) = (h / g, w / g);
    let n = (ch * cw) as f64;
    let mut data = vec![0.0; c * h * w];
    for k in 0..c {
        for r in 0..h {
            for col in 0..w {
                data[(k * h + r) * w + col] = dy[(k * g + r / ch) * g + col / cw] / n;
            }
        }
    }
    Tensor::from_data(c, h, w, data)
}

/// Sinusoidal embedding of a step index.
pub fn time_embedding(step: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(1000f64).ln() * k as f64 / half.max(1) as f64).exp();
        out.push((step * freq).sin());
    }
    for k in 0..half {
        let freq = (-(1000f64).ln() * k as f64 / half.max(1) as f64).exp();
        out.push((step * freq).cos());
    }
    out.resize(dim, 0.0);
    out
}

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent with global-norm clipping.
    Sgd { lr: f64, clip: f64 },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        clip: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd {
            lr: 0.01,
            clip: 1.0,
        }
    }
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let n = if matches!(kind, OptimizerKind::Adam { .. }) {
            n_params
        } else {
            0
        };
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Applies one update with learning rate scaled by `lr_scale`.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64], lr_scale: f64) {
        match self.kind {
            OptimizerKind::Sgd { lr, clip } => {
                clip_norm(grad, clip);
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= lr * lr_scale * g;
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
                clip,
            } => {
                clip_norm(grad, clip);
                self.t += 1;
                let b1t = 1.0 - beta1.powi(self.t as i32);
                let b2t = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / b1t;
                    let vh = self.v[i] / b2t;
                    params[i] -= lr * lr_scale * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
