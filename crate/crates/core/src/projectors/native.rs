use super::{Comparison, ConditionMap, Projector, ProjectorKind};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::imgproc::{average_pool, gaussian_blur, grayscale, min_max_normalize, radius_3sigma, sobel};

/// Unweighted channel mean, so that `|gray(x) - gray(y)|` never exceeds the
/// mean absolute channel difference at a pixel.
fn channel_mean(image: &ImageTensor) -> Vec<f64> {
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    r.iter().zip(g).zip(b).map(|((r, g), b)| (r + g + b) / 3.0).collect()
}

/// Channel-mean gray followed by `block x block` averaging. Averaging is a
/// contraction, so the map distance is bounded by the mean absolute
/// reconstruction error (Lipschitz constant 1).
pub fn block_average(image: &ImageTensor, block: usize) -> Result<ConditionMap> {
    let (h, w) = (image.height(), image.width());
    let pooled = average_pool(&channel_mean(image), h, w, block)?;
    ConditionMap::spatial("block_average", h / block, w / block, pooled)
}

#[derive(Clone, Debug)]
pub struct BlockAverage {
    pub block: usize,
}

impl Projector for BlockAverage {
    fn name(&self) -> &str {
        "block_average"
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::SpatialMap
    }

    fn comparison(&self) -> Comparison {
        Comparison::L1Mean
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }

    fn stamp(&self) -> String {
        format!("block_average(block={},gray=channel-mean)", self.block)
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        block_average(image, self.block)
    }
}

/// Offline depth-like projector: blurred Sobel magnitude, min-max
/// normalized per image.
#[derive(Clone, Debug)]
pub struct GradientMagnitude {
    pub blur_sigma: f64,
}

impl Default for GradientMagnitude {
    fn default() -> Self {
        Self { blur_sigma: 1.0 }
    }
}

impl Projector for GradientMagnitude {
    fn name(&self) -> &str {
        "gradient_magnitude"
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::SpatialMap
    }

    fn comparison(&self) -> Comparison {
        Comparison::L1Mean
    }

    fn stamp(&self) -> String {
        format!("gradient_magnitude(sigma={},norm=minmax)", self.blur_sigma)
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        super::ensure_finite(image)?;
        let (h, w) = (image.height(), image.width());
        let gray = gaussian_blur(&grayscale(image), h, w, self.blur_sigma, radius_3sigma(self.blur_sigma));
        let (gx, gy) = sobel(&gray, h, w);
        let mut mag: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
        min_max_normalize(&mut mag);
        ConditionMap::spatial(self.name(), h, w, mag)
    }
}

/// Offline segmentation-like projector: blurred luma bucketed into `levels`
/// labels, stored as `label / (levels - 1)` and compared by label mismatch.
#[derive(Clone, Debug)]
pub struct IntensityLevels {
    pub levels: usize,
    pub blur_sigma: f64,
}

impl Default for IntensityLevels {
    fn default() -> Self {
        Self {
            levels: 8,
            blur_sigma: 2.0,
        }
    }
}

impl Projector for IntensityLevels {
    fn name(&self) -> &str {
        "intensity_levels"
    }

    fn kind(&self) -> ProjectorKind {
        ProjectorKind::SpatialMap
    }

    fn comparison(&self) -> Comparison {
        Comparison::LabelMismatch
    }

    fn stamp(&self) -> String {
        format!("intensity_levels(levels={},sigma={})", self.levels, self.blur_sigma)
    }

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap> {
        if self.levels < 2 {
            return Err(Error::InvalidParameter("intensity_levels needs at least 2 levels".into()));
        }
        super::ensure_finite(image)?;
        let (h, w) = (image.height(), image.width());
        let gray = gaussian_blur(&grayscale(image), h, w, self.blur_sigma, radius_3sigma(self.blur_sigma));
        let top = (self.levels - 1) as f64;
        let labels = gray
            .iter()
            .map(|&v| ((v * self.levels as f64).floor()).clamp(0.0, top) / top)
            .collect();
        ConditionMap::spatial(self.name(), h, w, labels)
    }
}
