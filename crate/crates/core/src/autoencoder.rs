//! The encode/decode adapter contract and dataset round-trips.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImagePair, ImageTensor};
use crate::error::{Error, Result};

/// A latent tensor `(channels, height, width)` produced by an encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub data: Vec<f64>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Image side divided by latent side.
    pub downsample_factor: usize,
    pub source_id: String,
}

impl LatentCode {
    pub fn new(
        source_id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        downsample_factor: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if downsample_factor == 0 {
            return Err(Error::InvalidParameter("downsample factor must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "latent has {} values for ({channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            height,
            width,
            downsample_factor,
            source_id: source_id.into(),
        })
    }

    /// Checks `image_side == latent_side * downsample_factor`.
    pub fn check_against(&self, image: &ImageTensor) -> Result<()> {
        if self.height * self.downsample_factor != image.height()
            || self.width * self.downsample_factor != image.width()
        {
            return Err(Error::ShapeMismatch(format!(
                "latent {}x{} with factor {} does not match image {}x{}",
                self.height,
                self.width,
                self.downsample_factor,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }
}

/// An autoencoder `(E, D)`. Implementations must be deterministic for a
/// fixed configuration.
pub trait Autoencoder: Send + Sync {
    fn name(&self) -> &str;

    fn downsample_factor(&self) -> usize;

    fn encode(&self, image: &ImageTensor) -> Result<LatentCode>;

    fn decode(&self, latent: &LatentCode) -> Result<ImageTensor>;

    /// `T = D ∘ E`. The reconstruction keeps the input's source id.
    fn roundtrip(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let latent = self.encode(image)?;
        let recon = self.decode(&latent)?;
        if recon.shape() != image.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adapter `{}` changed shape of `{}` from {:?} to {:?}",
                self.name(),
                image.source_id(),
                image.shape(),
                recon.shape()
            )));
        }
        Ok(recon.with_source_id(image.source_id()))
    }
}

/// Per-image failure during a round-trip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundtripFailure {
    pub source_id: String,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RoundtripOutcome {
    /// In reference order.
    pub pairs: Vec<ImagePair>,
    pub failures: Vec<RoundtripFailure>,
}

/// `<cache>/<adapter-name>/<source_id>.png`
pub fn reconstruction_cache_path(cache: &Path, adapter: &str, source_id: &str) -> PathBuf {
    cache.join(adapter).join(format!("{source_id}.png"))
}

/// Pairs every reference with `decode(encode(reference))`.
///
/// Images whose round-trip fails are left out and reported. When `cache` is
/// given, each reconstruction is also written as an 8-bit PNG; the in-memory
/// pairs keep full precision.
pub fn roundtrip_dataset(
    adapter: &dyn Autoencoder,
    references: &[ImageTensor],
    cache: Option<&Path>,
) -> Result<RoundtripOutcome> {
    if references.is_empty() {
        return Err(Error::InvalidParameter("no reference images to round-trip".into()));
    }
    let results: Vec<Result<ImagePair>> = references
        .par_iter()
        .map(|reference| {
            let recon = adapter.roundtrip(reference)?;
            if let Some(dir) = cache {
                recon.save_png(&reconstruction_cache_path(dir, adapter.name(), reference.source_id()))?;
            }
            ImagePair::new(reference.clone(), recon)
        })
        .collect();
    let mut pairs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (reference, result) in references.iter().zip(results) {
        match result {
            Ok(p) => pairs.push(p),
            Err(e) => {
                log::warn!(
                    "adapter `{}` failed on `{}`: {e}",
                    adapter.name(),
                    reference.source_id()
                );
                failures.push(RoundtripFailure {
                    source_id: reference.source_id().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(RoundtripOutcome { pairs, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FailsOn(&'static str);

    impl Autoencoder for FailsOn {
        fn name(&self) -> &str {
            "fails-on"
        }
        fn downsample_factor(&self) -> usize {
            1
        }
        fn encode(&self, image: &ImageTensor) -> Result<LatentCode> {
            if image.source_id() == self.0 {
                return Err(Error::adapter("fails-on", "boom"));
            }
            LatentCode::new(image.source_id(), 3, image.height(), image.width(), 1, image.data().to_vec())
        }
        fn decode(&self, latent: &LatentCode) -> Result<ImageTensor> {
            ImageTensor::new(&latent.source_id, latent.height, latent.width, latent.data.clone())
        }
    }

    #[test]
    fn failing_image_is_excluded_and_counted() {
        let refs = vec![
            ImageTensor::filled("a", 4, 0.2).unwrap(),
            ImageTensor::filled("b", 4, 0.4).unwrap(),
        ];
        let out = roundtrip_dataset(&FailsOn("b"), &refs, None).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].source_id(), "a");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].source_id, "b");
    }

    #[test]
    fn latent_factor_check() {
        let img = ImageTensor::filled("a", 32, 0.0).unwrap();
        let ok = LatentCode::new("a", 4, 2, 2, 16, vec![0.0; 16]).unwrap();
        assert!(ok.check_against(&img).is_ok());
        let bad = LatentCode::new("a", 4, 2, 2, 8, vec![0.0; 16]).unwrap();
        assert!(bad.check_against(&img).is_err());
    }
}
