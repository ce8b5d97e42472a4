use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::{
    relu, relu_backward, seeded, sigmoid, upsample2, upsample2_backward, BatchNorm2d, BnCache, Conv2d, Param, Tensor,
};
use crate::error::{Error, Result};

pub const DEFAULT_WIDTHS: [usize; 4] = [128, 64, 32, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Raw logits (edge maps).
    None,
    /// Probabilities in `(0,1)` (depth maps).
    Sigmoid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Layer {
    Bn(BatchNorm2d),
    Conv(Conv2d),
    Relu,
    Up,
}

enum Cache {
    Bn(BnCache),
    Conv(Tensor),
    Relu(Tensor),
    Up,
}

/// Input batch norm, four `upsample ×2 → (conv3×3 → BN → ReLU) ×2` stages
/// and a 1×1 head. Output side is 16× the latent side.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeDecoder {
    pub input_channels: usize,
    pub widths: [usize; 4],
    pub activation: OutputActivation,
    layers: Vec<Layer>,
}

/// Saved decoder weights with the training configuration stamp.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tool_version: String,
    pub config_stamp: String,
    pub decoder: ProbeDecoder,
}

impl ProbeDecoder {
    pub fn new(input_channels: usize, activation: OutputActivation, seed: u64) -> Result<Self> {
        Self::with_widths(input_channels, DEFAULT_WIDTHS, activation, seed)
    }

    pub fn with_widths(input_channels: usize, widths: [usize; 4], activation: OutputActivation, seed: u64) -> Result<Self> {
        if input_channels == 0 || widths.contains(&0) {
            return Err(Error::InvalidParameter("decoder channel counts must be positive".into()));
        }
        let mut rng = seeded(seed);
        let mut layers = vec![Layer::Bn(BatchNorm2d::new(input_channels))];
        let mut cin = input_channels;
        for &cout in &widths {
            layers.push(Layer::Up);
            for c in [cin, cout] {
                layers.push(Layer::Conv(Conv2d::new(c, cout, 3, &mut rng)));
                layers.push(Layer::Bn(BatchNorm2d::new(cout)));
                layers.push(Layer::Relu);
            }
            cin = cout;
        }
        layers.push(Layer::Conv(Conv2d::new(cin, 1, 1, &mut rng)));
        Ok(Self {
            input_channels,
            widths,
            activation,
            layers,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Bn(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Relu | Layer::Up => {}
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Bn(b) => 2 * b.c,
                Layer::Conv(c) => c.weight.value.len() + c.bias.value.len(),
                Layer::Relu | Layer::Up => 0,
            })
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} channels, got {}",
                self.input_channels, x.c
            )));
        }
        Ok(())
    }

    fn activate(&self, mut out: Tensor) -> Tensor {
        if self.activation == OutputActivation::Sigmoid {
            out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        out
    }

    /// Inference with running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = match l {
                Layer::Bn(b) => b.forward_eval(&h),
                Layer::Conv(c) => c.forward(&h),
                Layer::Relu => relu(&h),
                Layer::Up => upsample2(&h),
            };
        }
        Ok(self.activate(h))
    }

    fn forward_train_cached(&self, x: &Tensor) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            h = match l {
                Layer::Bn(b) => {
                    let (y, c) = b.forward_train(&h);
                    caches.push(Cache::Bn(c));
                    y
                }
                Layer::Conv(c) => {
                    let y = c.forward(&h);
                    caches.push(Cache::Conv(std::mem::replace(&mut h, y)));
                    continue;
                }
                Layer::Relu => {
                    let y = relu(&h);
                    caches.push(Cache::Relu(y.clone()));
                    y
                }
                Layer::Up => {
                    caches.push(Cache::Up);
                    upsample2(&h)
                }
            };
        }
        Ok((self.activate(h), caches))
    }

    /// Training-mode forward pass (batch statistics) followed by
    /// back-propagation of `grad_fn(output)`, which returns the loss and
    /// `dL/d output`. Gradients accumulate into the parameters.
    pub fn train_step(&mut self, x: &Tensor, grad_fn: impl FnOnce(&Tensor) -> Result<(f64, Vec<f64>)>) -> Result<f64> {
        let (out, caches) = self.forward_train_cached(x)?;
        let (loss, mut g) = grad_fn(&out)?;
        if self.activation == OutputActivation::Sigmoid {
            g.iter_mut().zip(&out.data).for_each(|(g, p)| *g *= p * (1.0 - p));
        }
        let mut dy = Tensor::from_vec(out.n, out.c, out.h, out.w, g);
        for (l, c) in self.layers.iter_mut().zip(caches.iter()).rev() {
            dy = match (l, c) {
                (Layer::Bn(b), Cache::Bn(c)) => b.backward(c, &dy),
                (Layer::Conv(conv), Cache::Conv(input)) => conv.backward(input, &dy),
                (Layer::Relu, Cache::Relu(out)) => relu_backward(out, &dy),
                (Layer::Up, Cache::Up) => upsample2_backward(&dy),
                _ => unreachable!("layer/cache mismatch"),
            };
        }
        Ok(loss)
    }

    /// Training-mode output (batch statistics), without caching.
    pub fn forward_train(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_train_cached(x)?.0)
    }

    /// Sets every batch-norm running statistic to the average of the batch
    /// statistics seen over `batches` (a fixed, ordered pass).
    pub fn recalibrate<'a>(&mut self, batches: impl IntoIterator<Item = &'a Tensor>) -> Result<()> {
        let bn_count = self.layers.iter().filter(|l| matches!(l, Layer::Bn(_))).count();
        let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(bn_count);
        let mut seen = 0usize;
        for x in batches {
            let (_, caches) = self.forward_train_cached(x)?;
            let stats: Vec<&BnCache> = caches
                .iter()
                .filter_map(|c| match c {
                    Cache::Bn(b) => Some(b),
                    _ => None,
                })
                .collect();
            if sums.is_empty() {
                sums = stats.iter().map(|b| (vec![0.0; b.mean.len()], vec![0.0; b.var.len()])).collect();
            }
            for (acc, b) in sums.iter_mut().zip(stats) {
                let unbias = if b.count > 1 { b.count as f64 / (b.count - 1) as f64 } else { 1.0 };
                acc.0.iter_mut().zip(&b.mean).for_each(|(a, m)| *a += m);
                acc.1.iter_mut().zip(&b.var).for_each(|(a, v)| *a += v * unbias);
            }
            seen += 1;
        }
        if seen == 0 {
            return Ok(());
        }
        let mut it = sums.into_iter();
        for l in &mut self.layers {
            if let Layer::Bn(b) = l {
                let (m, v) = it.next().expect("one statistic per batch-norm layer");
                b.running_mean = m.into_iter().map(|x| x / seen as f64).collect();
                b.running_var = v.into_iter().map(|x| x / seen as f64).collect();
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, config_stamp: &str) -> Result<()> {
        let ck = Checkpoint {
            tool_version: crate::VERSION.to_string(),
            config_stamp: config_stamp.to_string(),
            decoder: self.clone(),
        };
        let bytes = serde_json::to_vec(&ck)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint = serde_json::from_slice(&bytes)?;
        ck.decoder.params_mut().into_iter().for_each(Param::ensure_buffers);
        Ok(ck)
    }
}
