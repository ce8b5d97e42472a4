//! Condition projectors `φ`: deterministic maps from an image to the control
//! signal a conditional generator consumes.
//!
//! Spatial projectors emit single-channel maps with values in `[0, 1]`;
//! embedding projectors emit vectors compared by cosine similarity.

mod canny;
mod embedding;
mod external;
mod face;
mod native;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use canny::{canny, canny_plane, CannyParams, CannyProjector};
pub use embedding::{global_embedding, EmbeddingExtractor, EmbeddingProjector, ExternalEmbedding, ToyLinearEmbedding};
pub use external::{
    ExpectedOutput, ExternalProjector, ExtractorOutput, ExtractorProcess, InputFormat, MapNormalization, OutputHeader,
    PayloadEncoding,
};
pub use face::{face_extract, ExternalFaceExtractor, FaceDetection, FaceExtractor, FaceResult};
pub use native::{block_average, BlockAverage, GradientMagnitude, IntensityLevels};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    SpatialMap,
    Embedding,
    Face,
}

/// How two condition maps are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Mean absolute difference of normalized spatial maps.
    L1Mean,
    /// Fraction of pixels whose labels differ. Equals the L1 distance of
    /// one-hot encodings divided by two.
    LabelMismatch,
    /// Cosine similarity of vectors (a similarity, higher is better).
    Cosine,
}

impl Comparison {
    /// Whether larger values mean more drift.
    pub fn is_distance(self) -> bool {
        !matches!(self, Comparison::Cosine)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapData {
    Spatial {
        height: usize,
        width: usize,
        values: Vec<f64>,
    },
    Vector(Vec<f64>),
}

/// Output of a projector.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionMap {
    pub projector_name: String,
    pub data: MapData,
}

impl ConditionMap {
    pub fn spatial(projector_name: impl Into<String>, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        Ok(Self {
            projector_name: projector_name.into(),
            data: MapData::Spatial { height, width, values },
        })
    }

    pub fn vector(projector_name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            projector_name: projector_name.into(),
            data: MapData::Vector(values),
        }
    }

    pub fn values(&self) -> &[f64] {
        match &self.data {
            MapData::Spatial { values, .. } => values,
            MapData::Vector(v) => v,
        }
    }

    /// `(height, width)` for spatial maps.
    pub fn dims(&self) -> Option<(usize, usize)> {
        match &self.data {
            MapData::Spatial { height, width, .. } => Some((*height, *width)),
            MapData::Vector(_) => None,
        }
    }

    /// Compares two maps under `comparison`.
    pub fn compare(&self, other: &ConditionMap, comparison: Comparison) -> Result<f64> {
        if self.dims() != other.dims() || self.values().len() != other.values().len() {
            return Err(Error::ShapeMismatch(format!(
                "condition maps from `{}` differ in shape",
                self.projector_name
            )));
        }
        let (a, b) = (self.values(), other.values());
        match comparison {
            Comparison::L1Mean => {
                if a.is_empty() {
                    return Err(Error::ShapeMismatch("empty condition map".into()));
                }
                Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
            }
            Comparison::LabelMismatch => {
                if a.is_empty() {
                    return Err(Error::ShapeMismatch("empty condition map".into()));
                }
                Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
            }
            Comparison::Cosine => cosine_similarity(a, b).ok_or_else(|| Error::ZeroEmbedding(self.projector_name.clone())),
        }
    }
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    if a == b {
        return Some(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// L2-normalizes in place; `false` for a zero or non-finite vector.
pub fn l2_normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// A deterministic condition projector.
pub trait Projector: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> ProjectorKind;

    fn comparison(&self) -> Comparison;

    /// Proven Lipschitz constant with respect to mean absolute pixel error,
    /// if any.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    /// Parameter stamp recorded in report metadata and cache keys.
    fn stamp(&self) -> String;

    fn apply(&self, image: &ImageTensor) -> Result<ConditionMap>;
}

pub type SharedProjector = Arc<dyn Projector>;

pub(crate) fn ensure_finite(image: &ImageTensor) -> Result<()> {
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("image `{}`", image.source_id())));
    }
    Ok(())
}
