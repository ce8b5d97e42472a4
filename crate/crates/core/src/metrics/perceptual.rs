use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ImagePair, ImageTensor};
use crate::error::{Error, Result};

/// Activations of one layer, `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub channels: usize,
}

/// A feature network for perceptual distance.
pub trait FeatureNetwork: Send + Sync {
    fn name(&self) -> &str;

    fn layers(&self) -> Vec<LayerInfo>;

    /// Per-layer, per-channel weights; `None` means uniform weights of one.
    fn channel_weights(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn forward(&self, image: &ImageTensor) -> Result<Vec<FeatureMap>>;
}

const NORM_EPS: f64 = 1e-10;

fn unit_normalize_channels(f: &FeatureMap) -> Vec<f64> {
    let hw = f.height * f.width;
    let mut out = f.data.clone();
    for p in 0..hw {
        let norm = (0..f.channels).map(|c| f.data[c * hw + p].powi(2)).sum::<f64>().sqrt();
        for c in 0..f.channels {
            out[c * hw + p] /= norm + NORM_EPS;
        }
    }
    out
}

/// LPIPS-style aggregation: unit-normalize features along channels,
/// square the difference, weight channels, average over space and sum over
/// layers.
pub fn perceptual_distance(pair: &ImagePair, net: &dyn FeatureNetwork) -> Result<f64> {
    let fa = net.forward(pair.reference())?;
    let fb = net.forward(pair.reconstruction())?;
    let layers = net.layers();
    if fa.len() != layers.len() || fb.len() != layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "network `{}` declared {} layers but produced {}/{}",
            net.name(),
            layers.len(),
            fa.len(),
            fb.len()
        )));
    }
    let weights = net.channel_weights();
    let mut total = 0.0;
    for (l, (a, b)) in fa.iter().zip(&fb).enumerate() {
        if a.channels != layers[l].channels || (a.channels, a.height, a.width) != (b.channels, b.height, b.width) {
            return Err(Error::DimensionMismatch(format!("layer `{}` shape", layers[l].name)));
        }
        let (na, nb) = (unit_normalize_channels(a), unit_normalize_channels(b));
        let hw = a.height * a.width;
        let mut layer_sum = 0.0;
        for c in 0..a.channels {
            let w = weights.as_ref().map_or(1.0, |w| w[l][c]);
            let s: f64 = (0..hw).map(|p| (na[c * hw + p] - nb[c * hw + p]).powi(2)).sum();
            layer_sum += w * s;
        }
        total += layer_sum / hw as f64;
    }
    Ok(total)
}

/// Deterministic two-layer convolutional network with fixed Gaussian
/// weights (3x3 kernels, stride 2, ReLU). Stands in for a pretrained
/// backbone in tests and offline runs.
#[derive(Clone, Debug)]
pub struct ToyConvNet {
    seed: u64,
    // (in, out, weights [out][in][3][3], bias)
    convs: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
}

impl ToyConvNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.5).expect("valid normal");
        let convs = [(3usize, 4usize), (4, 8)]
            .into_iter()
            .map(|(cin, cout)| {
                let w = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                let b = (0..cout).map(|_| normal.sample(&mut rng) * 0.1).collect();
                (cin, cout, w, b)
            })
            .collect();
        Self { seed, convs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn conv_stride2(input: &FeatureMap, cin: usize, cout: usize, w: &[f64], b: &[f64]) -> FeatureMap {
        let (h, wd) = (input.height, input.width);
        let (oh, ow) = (h.div_ceil(2), wd.div_ceil(2));
        let mut out = vec![0.0; cout * oh * ow];
        for o in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = (2 * y + ky) as isize - 1;
                                let sx = (2 * x + kx) as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w[((o * cin + i) * 3 + ky) * 3 + kx]
                                    * input.data[(i * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[(o * oh + y) * ow + x] = acc.max(0.0);
                }
            }
        }
        FeatureMap {
            channels: cout,
            height: oh,
            width: ow,
            data: out,
        }
    }
}

impl FeatureNetwork for ToyConvNet {
    fn name(&self) -> &str {
        "toy_conv"
    }

    fn layers(&self) -> Vec<LayerInfo> {
        self.convs
            .iter()
            .enumerate()
            .map(|(i, c)| LayerInfo {
                name: format!("conv{}", i + 1),
                channels: c.1,
            })
            .collect()
    }

    fn forward(&self, image: &ImageTensor) -> Result<Vec<FeatureMap>> {
        let mut x = FeatureMap {
            channels: 3,
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|v| 2.0 * v - 1.0).collect(),
        };
        let mut outs = Vec::with_capacity(self.convs.len());
        for (cin, cout, w, b) in &self.convs {
            x = Self::conv_stride2(&x, *cin, *cout, w, b);
            outs.push(x.clone());
        }
        Ok(outs)
    }
}
