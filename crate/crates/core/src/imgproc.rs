//! Plane-level image kernels shared by projectors, metrics and the
//! synthetic autoencoders. Planes are row-major `height * width` slices.
//! Borders are handled by edge replication unless noted.

use crate::data::ImageTensor;
use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn grayscale(image: &ImageTensor) -> Vec<f64> {
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((r, g), b)| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
        .collect()
}

/// Normalized 1-D Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        let mut k = vec![0.0; 2 * radius + 1];
        k[radius] = 1.0;
        return k;
    }
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable convolution with a symmetric odd-length kernel,
/// edge-replicated borders.
pub fn convolve_separable(plane: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * row[clamp_index(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * tmp[clamp_index(y as isize + k as isize - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Gaussian blur of one plane with an explicit kernel radius.
pub fn gaussian_blur(plane: &[f64], height: usize, width: usize, sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    convolve_separable(plane, height, width, &gaussian_kernel(sigma, radius))
}

/// Radius covering three standard deviations.
pub fn radius_3sigma(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// Blurs every channel of an image (radius `ceil(3σ)`).
pub fn blur_image(image: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    let radius = radius_3sigma(sigma);
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..3 {
        data.extend(gaussian_blur(image.plane(c), h, w, sigma, radius));
    }
    ImageTensor::from_clamped(image.source_id(), h, w, data)
}

/// 3x3 Sobel gradients `(gx, gy)`; `gx` responds to left-to-right increase.
pub fn sobel(plane: &[f64], height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    let at = |y: isize, x: isize| plane[clamp_index(y, height) * width + clamp_index(x, width)];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let (tl, t, tr) = (at(y - 1, x - 1), at(y - 1, x), at(y - 1, x + 1));
            let (l, r) = (at(y, x - 1), at(y, x + 1));
            let (bl, b, br) = (at(y + 1, x - 1), at(y + 1, x), at(y + 1, x + 1));
            let i = y as usize * width + x as usize;
            gx[i] = (tr + 2.0 * r + br) - (tl + 2.0 * l + bl);
            gy[i] = (bl + 2.0 * b + br) - (tl + 2.0 * t + tr);
        }
    }
    (gx, gy)
}

/// Mean over non-overlapping `block x block` tiles.
pub fn average_pool(plane: &[f64], height: usize, width: usize, block: usize) -> Result<Vec<f64>> {
    if block == 0 || height % block != 0 || width % block != 0 {
        return Err(Error::InvalidParameter(format!(
            "block {block} does not divide {height}x{width}"
        )));
    }
    let (oh, ow) = (height / block, width / block);
    let mut out = vec![0.0; oh * ow];
    for y in 0..height {
        for x in 0..width {
            out[(y / block) * ow + x / block] += plane[y * width + x];
        }
    }
    let area = (block * block) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Rescales to `[0, 1]` by the plane's own min and max; a flat plane maps
/// to zeros.
pub fn min_max_normalize(plane: &mut [f64]) {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        plane.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    plane.iter_mut().for_each(|v| *v = (*v - lo) / range);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.0, 2);
        assert_eq!(k.len(), 5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[4]);
        assert_eq!(k[1], k[3]);
    }

    #[test]
    fn blur_preserves_constants() {
        let plane = vec![0.25; 36];
        let out = gaussian_blur(&plane, 6, 6, 2.0, 6);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn sobel_on_ramp() {
        // value = x, so gx = 8 in the interior and gy = 0
        let (h, w) = (5, 5);
        let plane: Vec<f64> = (0..h * w).map(|i| (i % w) as f64).collect();
        let (gx, gy) = sobel(&plane, h, w);
        assert_eq!(gx[2 * w + 2], 8.0);
        assert_eq!(gy[2 * w + 2], 0.0);
    }

    #[test]
    fn pool_rejects_non_divisor() {
        assert!(average_pool(&[0.0; 12], 3, 4, 2).is_err());
        let p = average_pool(&[1.0, 2.0, 3.0, 4.0], 2, 2, 2).unwrap();
        assert_eq!(p, vec![2.5]);
    }
}
