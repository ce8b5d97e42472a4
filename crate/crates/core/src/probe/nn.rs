//! Minimal f64 layers with hand-written backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Batch of feature maps, `(n, c, h, w)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    fn same_shape(&self, data: Vec<f64>) -> Self {
        Self::from_vec(self.n, self.c, self.h, self.w, data)
    }
}

/// A trainable tensor with its gradient and AdamW moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    #[serde(skip)]
    m: Vec<f64>,
    #[serde(skip)]
    v: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Restores optimizer buffers after deserialization.
    pub(crate) fn ensure_buffers(&mut self) {
        let n = self.value.len();
        for b in [&mut self.grad, &mut self.m, &mut self.v] {
            if b.len() != n {
                *b = vec![0.0; n];
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&self, p: &mut Param) {
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
            p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
            let step = (p.m[i] / c1) / ((p.v[i] / c2).sqrt() + self.eps);
            p.value[i] -= self.lr * (step + self.weight_decay * p.value[i]);
        }
    }
}

/// `C = A (m×k) · B (k×n)` with arbitrary strides, accumulating when
/// `beta = 1`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices covering the strided extents used here.
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

/// Square convolution, stride 1, zero padding `k / 2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `(cout, cin, k, k)`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weight = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
        Self {
            cin,
            cout,
            k,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; cout]),
        }
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (k, pad) = (self.k, (self.k / 2) as isize);
        let hw = h * w;
        let mut cols = vec![0.0; self.cin * k * k * hw];
        for c in 0..self.cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx >= 0 && sx < w as isize {
                                row[y * w + xx] = plane[sy as usize * w + sx as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (k, pad) = (self.k, (self.k / 2) as isize);
        let hw = h * w;
        let mut x = vec![0.0; self.cin * hw];
        for c in 0..self.cin {
            let plane = &mut x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pad;
                            if sx >= 0 && sx < w as isize {
                                plane[sy as usize * w + sx as usize] += row[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let outs: Vec<Vec<f64>> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.sample(i), h, w);
                let mut out = vec![0.0; self.cout * hw];
                for (o, b) in self.bias.value.iter().enumerate() {
                    out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
                }
                gemm(self.cout, kk, hw, &self.weight.value, kk as isize, 1, &cols, hw as isize, 1, 1.0, &mut out);
                out
            })
            .collect();
        Tensor::from_vec(x.n, self.cout, h, w, outs.concat())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let per: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let cols = self.im2col(x.sample(i), h, w);
                let g = dy.sample(i);
                let mut dw = vec![0.0; self.cout * kk];
                // dW = dY (cout×hw) · colsᵀ (hw×kk)
                gemm(self.cout, hw, kk, g, hw as isize, 1, &cols, 1, hw as isize, 0.0, &mut dw);
                let db = (0..self.cout).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
                // dcols = Wᵀ (kk×cout) · dY (cout×hw)
                let mut dcols = vec![0.0; kk * hw];
                gemm(kk, self.cout, hw, &self.weight.value, 1, kk as isize, g, hw as isize, 1, 0.0, &mut dcols);
                (dw, db, self.col2im(&dcols, h, w))
            })
            .collect();
        let mut dx = Vec::with_capacity(x.data.len());
        for (dw, db, dxi) in per {
            self.weight.grad.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
            self.bias.grad.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            dx.extend(dxi);
        }
        x.same_shape(dx)
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization with affine parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchNorm2d {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    /// Unbiased.
    pub running_var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            gamma: Param::new(vec![1.0; c]),
            beta: Param::new(vec![0.0; c]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }

    fn for_each_channel(x: &Tensor, ch: usize, mut f: impl FnMut(usize)) {
        let hw = x.h * x.w;
        for i in 0..x.n {
            let base = (i * x.c + ch) * hw;
            for j in base..base + hw {
                f(j);
            }
        }
    }

    pub fn forward_train(&self, x: &Tensor) -> (Tensor, BnCache) {
        assert_eq!(x.c, self.c, "batch-norm channels");
        let count = x.n * x.h * x.w;
        let mut y = vec![0.0; x.data.len()];
        let mut xhat = vec![0.0; x.data.len()];
        let (mut means, mut vars, mut inv_stds) = (vec![0.0; self.c], vec![0.0; self.c], vec![0.0; self.c]);
        for ch in 0..self.c {
            let mut sum = 0.0;
            Self::for_each_channel(x, ch, |j| sum += x.data[j]);
            let mean = sum / count as f64;
            let mut sq = 0.0;
            Self::for_each_channel(x, ch, |j| sq += (x.data[j] - mean).powi(2));
            let var = sq / count as f64;
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            Self::for_each_channel(x, ch, |j| {
                xhat[j] = (x.data[j] - mean) * inv_std;
                y[j] = g * xhat[j] + b;
            });
            means[ch] = mean;
            vars[ch] = var;
            inv_stds[ch] = inv_std;
        }
        (
            x.same_shape(y),
            BnCache {
                xhat,
                inv_std: inv_stds,
                mean: means,
                var: vars,
                count,
            },
        )
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut y = vec![0.0; x.data.len()];
        for ch in 0..self.c {
            let inv_std = 1.0 / (self.running_var[ch] + BN_EPS).sqrt();
            let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
            Self::for_each_channel(x, ch, |j| y[j] = g * (x.data[j] - m) * inv_std + b);
        }
        x.same_shape(y)
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor) -> Tensor {
        let mut dx = vec![0.0; dy.data.len()];
        let m = cache.count as f64;
        for ch in 0..self.c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            Self::for_each_channel(dy, ch, |j| {
                sum_dy += dy.data[j];
                sum_dy_xhat += dy.data[j] * cache.xhat[j];
            });
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let g = self.gamma.value[ch];
            let k = g * cache.inv_std[ch] / m;
            Self::for_each_channel(dy, ch, |j| {
                dx[j] = k * (m * dy.data[j] - sum_dy - cache.xhat[j] * sum_dy_xhat);
            });
        }
        dy.same_shape(dx)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.same_shape(x.data.iter().map(|v| v.max(0.0)).collect())
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    dy.same_shape(out.data.iter().zip(&dy.data).map(|(o, g)| if *o > 0.0 { *g } else { 0.0 }).collect())
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Vec::with_capacity(x.data.len() * 4);
    for plane in x.data.chunks_exact(x.h * x.w) {
        for y in 0..h {
            for xx in 0..w {
                out.push(plane[(y / 2) * x.w + xx / 2]);
            }
        }
    }
    Tensor::from_vec(x.n, x.c, h, w, out)
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut out = vec![0.0; dy.n * dy.c * h * w];
    for (p, plane) in dy.data.chunks_exact(dy.h * dy.w).enumerate() {
        let o = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..dy.h {
            for x in 0..dy.w {
                o[(y / 2) * w + x / 2] += plane[y * dy.w + x];
            }
        }
    }
    Tensor::from_vec(dy.n, dy.c, h, w, out)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = seeded(1);
        let conv = Conv2d::new(2, 3, 3, &mut rng);
        let x = Tensor::from_vec(1, 2, 3, 4, (0..24).map(|i| (i as f64 * 0.37).sin()).collect());
        let y = conv.forward(&x);
        for o in 0..3 {
            for yy in 0..3 {
                for xx in 0..4 {
                    let mut s = conv.bias.value[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if (0..3).contains(&sy) && (0..4).contains(&sx) {
                                    s += conv.weight.value[((o * 2 + c) * 3 + ky) * 3 + kx]
                                        * x.data[(c * 3 + sy as usize) * 4 + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[(o * 3 + yy) * 4 + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_norm_normalizes() {
        let bn = BatchNorm2d::new(1);
        let x = Tensor::from_vec(2, 1, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let (y, c) = bn.forward_train(&x);
        assert!((c.mean[0] - 2.5).abs() < 1e-15);
        assert!(y.data.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn upsample_roundtrip_sums() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![1.0, 2.0]);
        let u = upsample2(&x);
        assert_eq!(u.data, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample2_backward(&u).data, vec![4.0, 8.0]);
    }

    #[test]
    fn adamw_with_zero_lr_is_a_no_op() {
        let mut p = Param::new(vec![1.0, -2.0]);
        p.grad = vec![0.5, 0.5];
        let mut opt = AdamW::new(0.0, 0.01);
        opt.begin_step();
        opt.update(&mut p);
        assert_eq!(p.value, vec![1.0, -2.0]);
    }
}
