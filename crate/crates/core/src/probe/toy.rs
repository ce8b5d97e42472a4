use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::train::ProbeSample;
use crate::autoencoder::Autoencoder;
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::{average_pool, grayscale};
use crate::projectors::{canny, CannyParams, Projector};
use crate::synthetic::{blob_image, step_edge_image};

/// Rearranges `f x f` tiles of a plane into `f²` channels.
pub fn space_to_depth(plane: &[f64], height: usize, width: usize, f: usize) -> Result<Vec<f64>> {
    if f == 0 || height % f != 0 || width % f != 0 {
        return Err(Error::InvalidParameter(format!("factor {f} does not divide {height}x{width}")));
    }
    let (oh, ow) = (height / f, width / f);
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let c = (y % f) * f + x % f;
            out[(c * oh + y / f) * ow + x / f] = plane[y * width + x];
        }
    }
    Ok(out)
}

/// Toy 16× latent: luma, 4×4 average pooling, then space-to-depth by 4.
/// A 32×32 image becomes 16 channels at 2×2.
pub fn toy_latent(image: &ImageTensor) -> Result<(Vec<f64>, usize, usize, usize)> {
    let (h, w) = (image.height(), image.width());
    let pooled = average_pool(&grayscale(image), h, w, 4)?;
    let (ph, pw) = (h / 4, w / 4);
    Ok((space_to_depth(&pooled, ph, pw, 4)?, 16, ph / 4, pw / 4))
}

fn toy_image(i: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let id = format!("toy_{i:05}");
    let lo = rng.gen_range(0.0..0.4);
    let hi = rng.gen_range(lo + 0.4..=1.0);
    let (a, b) = if rng.gen_bool(0.5) { (lo, hi) } else { (hi, lo) };
    if i % 2 == 0 {
        let (cx, cy) = (rng.gen_range(8.0..24.0), rng.gen_range(8.0..24.0));
        step_edge_image(&id, 32, cx, cy, rng.gen_range(0.0..std::f64::consts::TAU), a, b)
    } else {
        let (cx, cy) = (rng.gen_range(10.0..22.0), rng.gen_range(10.0..22.0));
        blob_image(&id, 32, cx, cy, rng.gen_range(4.0..9.0), a, b)
    }
}

/// Step-edge and disc images (alternating) with native Canny targets and
/// toy latents.
pub fn toy_edge_samples(n: usize, seed: u64) -> Result<Vec<ProbeSample>> {
    let params = CannyParams::default();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let img = toy_image(i, &mut rng);
            let (latent, channels, height, width) = toy_latent(&img)?;
            Ok(ProbeSample {
                source_id: img.source_id().to_string(),
                latent,
                channels,
                height,
                width,
                target: canny(&img, &params)?.values().to_vec(),
            })
        })
        .collect()
}

/// Latents from `adapter` and targets from `projector` applied to the
/// original images. The projector's map must be 16× the latent side.
pub fn probe_samples(images: &[ImageTensor], adapter: &dyn Autoencoder, projector: &dyn Projector) -> Result<Vec<ProbeSample>> {
    images
        .par_iter()
        .map(|img| {
            let z = adapter.encode(img)?;
            let map = projector.apply(img)?;
            let (h, w) = map
                .dims()
                .ok_or_else(|| Error::InvalidParameter(format!("projector `{}` is not spatial", projector.name())))?;
            if (h, w) != (16 * z.height, 16 * z.width) {
                return Err(Error::ShapeMismatch(format!(
                    "target {h}x{w} is not 16x the latent {}x{}",
                    z.height, z.width
                )));
            }
            Ok(ProbeSample {
                source_id: img.source_id().to_string(),
                latent: z.data,
                channels: z.channels,
                height: z.height,
                width: z.width,
                target: map.values().to_vec(),
            })
        })
        .collect()
}
