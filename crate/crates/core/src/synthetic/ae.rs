use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{Autoencoder, LatentCode};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::blur_image;

#[derive(Clone, Debug)]
pub enum SyntheticKind {
    Identity,
    Blur { sigma: f64 },
    /// Rounds every value to one of `levels` evenly spaced values.
    Quantize { levels: usize },
    /// Maps the image with source id `k` to `table[k]`.
    Permutation { table: Arc<BTreeMap<String, ImageTensor>> },
    /// `factor x factor` average pooling, nearest-neighbour upsampling.
    PatchPool { factor: usize },
}

/// A closed-form autoencoder used as a test fixture.
#[derive(Clone, Debug)]
pub struct SyntheticAE {
    name: String,
    kind: SyntheticKind,
}

impl SyntheticAE {
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            kind: SyntheticKind::Identity,
        }
    }

    pub fn blur(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("blur sigma {sigma} must be finite and >= 0")));
        }
        if sigma == 0.0 {
            return Ok(Self::identity());
        }
        Ok(Self {
            name: format!("blur_s{sigma}"),
            kind: SyntheticKind::Blur { sigma },
        })
    }

    pub fn quantize(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidParameter("quantization needs at least 2 levels".into()));
        }
        Ok(Self {
            name: format!("quantize_{levels}"),
            kind: SyntheticKind::Quantize { levels },
        })
    }

    pub fn patch_pool(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("pool factor must be positive".into()));
        }
        Ok(Self {
            name: format!("patch_pool_{factor}"),
            kind: SyntheticKind::PatchPool { factor },
        })
    }

    pub fn kind(&self) -> &SyntheticKind {
        &self.kind
    }

    /// Stamp of every parameter affecting the round-trip.
    pub fn stamp(&self) -> String {
        match &self.kind {
            SyntheticKind::Identity => "identity".into(),
            SyntheticKind::Blur { sigma } => format!("blur(sigma={sigma})"),
            SyntheticKind::Quantize { levels } => format!("quantize(levels={levels})"),
            SyntheticKind::Permutation { table } => format!("permutation(n={})", table.len()),
            SyntheticKind::PatchPool { factor } => format!("patch_pool(factor={factor})"),
        }
    }

    /// Source id of the image that `source_id` is sent to, for
    /// permutation AEs.
    pub fn target_of(&self, source_id: &str) -> Option<&str> {
        match &self.kind {
            SyntheticKind::Permutation { table } => table.get(source_id).map(|t| t.source_id()),
            _ => None,
        }
    }
}

impl Autoencoder for SyntheticAE {
    fn name(&self) -> &str {
        &self.name
    }

    fn downsample_factor(&self) -> usize {
        match self.kind {
            SyntheticKind::PatchPool { factor } => factor,
            _ => 1,
        }
    }

    fn encode(&self, image: &ImageTensor) -> Result<LatentCode> {
        let (h, w) = (image.height(), image.width());
        match self.kind {
            SyntheticKind::PatchPool { factor } => {
                let mut data = Vec::new();
                for c in 0..3 {
                    data.extend(crate::imgproc::average_pool(image.plane(c), h, w, factor)?);
                }
                LatentCode::new(image.source_id(), 3, h / factor, w / factor, factor, data)
            }
            _ => LatentCode::new(image.source_id(), 3, h, w, 1, image.data().to_vec()),
        }
    }

    fn decode(&self, latent: &LatentCode) -> Result<ImageTensor> {
        let id = latent.source_id.as_str();
        let (h, w) = (latent.height, latent.width);
        match &self.kind {
            SyntheticKind::Identity => ImageTensor::new(id, h, w, latent.data.clone()),
            SyntheticKind::Blur { sigma } => blur_image(&ImageTensor::new(id, h, w, latent.data.clone())?, *sigma),
            SyntheticKind::Quantize { levels } => {
                let top = (*levels - 1) as f64;
                let data = latent.data.iter().map(|v| (v * top).round() / top).collect();
                ImageTensor::new(id, h, w, data)
            }
            SyntheticKind::Permutation { table } => table
                .get(id)
                .cloned()
                .ok_or_else(|| Error::adapter(&self.name, format!("`{id}` is not in the permutation's dataset"))),
            SyntheticKind::PatchPool { factor } => {
                let (oh, ow) = (h * factor, w * factor);
                let mut data = Vec::with_capacity(3 * oh * ow);
                for c in 0..3 {
                    let plane = &latent.data[c * h * w..(c + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            data.push(plane[(y / factor) * w + x / factor]);
                        }
                    }
                }
                ImageTensor::from_clamped(id, oh, ow, data)
            }
        }
    }
}

/// A seeded fixed-point-free permutation over `dataset`: the round-trip of
/// image `i` is image `π(i)`. Shuffles are redrawn until no index stays in
/// place.
pub fn make_permutation_ae(dataset: &[ImageTensor], seed: u64) -> Result<SyntheticAE> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let mut table = BTreeMap::new();
    for (i, &p) in perm.iter().enumerate() {
        let key = dataset[i].source_id().to_string();
        if table.insert(key.clone(), dataset[p].clone()).is_some() {
            return Err(Error::DuplicateSourceId(key));
        }
    }
    Ok(SyntheticAE {
        name: format!("permutation_seed{seed}"),
        kind: SyntheticKind::Permutation { table: Arc::new(table) },
    })
}

/// Gaussian-blur autoencoders for strictly increasing `sigmas`; `σ = 0`
/// is the identity.
pub fn make_blur_family(sigmas: &[f64]) -> Result<Vec<SyntheticAE>> {
    if sigmas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("blur sigmas must be strictly increasing".into()));
    }
    sigmas.iter().map(|&s| SyntheticAE::blur(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::shapes_dataset;

    #[test]
    fn identity_is_exact() {
        let imgs = shapes_dataset(3, 32, 1);
        for img in &imgs {
            let r = SyntheticAE::identity().roundtrip(img).unwrap();
            assert_eq!(r.data(), img.data());
        }
    }

    #[test]
    fn two_images_swap() {
        let imgs = shapes_dataset(2, 32, 5);
        let ae = make_permutation_ae(&imgs, 9).unwrap();
        assert_eq!(ae.target_of(imgs[0].source_id()), Some(imgs[1].source_id()));
        assert_eq!(ae.target_of(imgs[1].source_id()), Some(imgs[0].source_id()));
        let r = ae.roundtrip(&imgs[0]).unwrap();
        assert_eq!(r.data(), imgs[1].data());
        assert_eq!(r.source_id(), imgs[0].source_id());
    }

    #[test]
    fn five_image_derangement_is_deterministic() {
        let imgs = shapes_dataset(5, 32, 2);
        let a = make_permutation_ae(&imgs, 42).unwrap();
        let b = make_permutation_ae(&imgs, 42).unwrap();
        let mut targets = Vec::new();
        for img in &imgs {
            let t = a.target_of(img.source_id()).unwrap();
            assert_ne!(t, img.source_id());
            assert_eq!(Some(t), b.target_of(img.source_id()));
            targets.push(t.to_string());
        }
        targets.sort();
        let mut ids: Vec<String> = imgs.iter().map(|i| i.source_id().to_string()).collect();
        ids.sort();
        assert_eq!(targets, ids);
    }

    #[test]
    fn permutation_rejects_single_image() {
        assert!(make_permutation_ae(&shapes_dataset(1, 32, 0), 0).is_err());
    }

    #[test]
    fn blur_family_validation() {
        let fam = make_blur_family(&[0.0]).unwrap();
        assert!(matches!(fam[0].kind(), SyntheticKind::Identity));
        assert!(make_blur_family(&[1.0, 1.0]).is_err());
        assert!(make_blur_family(&[-1.0, 1.0]).is_err());
    }

    #[test]
    fn quantize_and_pool_keep_shape() {
        let img = &shapes_dataset(1, 32, 3)[0];
        let q = SyntheticAE::quantize(4).unwrap().roundtrip(img).unwrap();
        assert!(q.data().iter().all(|v| ((v * 3.0).round() - v * 3.0).abs() < 1e-12));
        let p = SyntheticAE::patch_pool(4).unwrap();
        assert_eq!(p.encode(img).unwrap().height, 8);
        assert_eq!(p.roundtrip(img).unwrap().shape(), img.shape());
    }
}
