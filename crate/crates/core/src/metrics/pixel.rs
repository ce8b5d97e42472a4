use serde::{Deserialize, Serialize};

use crate::data::{check_same_shape, ImagePair, ImageTensor};
use crate::error::{Error, Result};
use crate::imgproc::gaussian_kernel;

/// Peak signal-to-noise ratio in dB with peak value 1.0 (equivalent to 255
/// on the 8-bit scale). Identical images give `+∞`.
pub fn psnr(pair: &ImagePair) -> f64 {
    psnr_images(pair.reference(), pair.reconstruction()).unwrap_or(f64::NAN)
}

pub(crate) fn psnr_images(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Separable correlation over the valid region only.
fn filter_valid(plane: &[f64], height: usize, width: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut tmp = vec![0.0; height * ow];
    for y in 0..height {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| kernel[i] * plane[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Gaussian-windowed SSIM averaged over valid window positions and the
/// three channels; `C1 = (K1·1)²`, `C2 = (K2·1)²`.
pub fn ssim(pair: &ImagePair, params: &SsimParams) -> Result<f64> {
    let (a, b) = (pair.reference(), pair.reconstruction());
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if params.window == 0 || params.window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("SSIM window {} must be odd", params.window)));
    }
    if h < params.window || w < params.window {
        return Err(Error::InvalidParameter(format!(
            "image {h}x{w} is smaller than the SSIM window {}",
            params.window
        )));
    }
    let kernel = gaussian_kernel(params.sigma, params.window / 2);
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let (x, y) = (a.plane(c), b.plane(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter_valid(x, h, w, &kernel);
        let (my, _, _) = filter_valid(y, h, w, &kernel);
        let (sxx, _, _) = filter_valid(&xx, h, w, &kernel);
        let (syy, _, _) = filter_valid(&yy, h, w, &kernel);
        let (sxy, _, _) = filter_valid(&xy, h, w, &kernel);
        for i in 0..oh * ow {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
        }
        count += oh * ow;
    }
    Ok(total / count as f64)
}
