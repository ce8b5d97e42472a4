use serde::{Deserialize, Serialize};

use super::external::{output_kind, ExtractorOutput, ExtractorProcess};
use super::l2_normalize;
use crate::data::ImageTensor;
use crate::error::{Error, Result};

/// One detected face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub bbox_area: f64,
    pub embedding: Vec<f64>,
}

/// A face detector with an identity-embedding head.
pub trait FaceExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn detect(&self, image: &ImageTensor) -> Result<Vec<FaceDetection>>;
}

/// Largest face in an image, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceResult {
    pub detected: bool,
    /// Unit L2 norm when present.
    pub embedding: Option<Vec<f64>>,
    pub bbox_area: Option<f64>,
}

impl FaceResult {
    pub fn none() -> Self {
        Self {
            detected: false,
            embedding: None,
            bbox_area: None,
        }
    }
}

/// Selects the largest detection and L2-normalizes its embedding.
///
/// An extractor failure is logged and reported as "no face"; the log line
/// distinguishes it from a genuine empty detection.
pub fn face_extract(image: &ImageTensor, extractor: &dyn FaceExtractor) -> FaceResult {
    let faces = match extractor.detect(image) {
        Ok(f) => f,
        Err(e) => {
            log::error!(
                "face extractor `{}` failed on `{}` (treated as no detection): {e}",
                extractor.name(),
                image.source_id()
            );
            return FaceResult::none();
        }
    };
    let best = faces
        .into_iter()
        .filter(|f| f.bbox_area.is_finite() && f.bbox_area >= 0.0)
        .max_by(|a, b| a.bbox_area.total_cmp(&b.bbox_area));
    let Some(mut face) = best else {
        log::debug!("no face in `{}`", image.source_id());
        return FaceResult::none();
    };
    if !l2_normalize(&mut face.embedding) {
        log::error!(
            "face extractor `{}` returned a zero embedding for `{}`",
            extractor.name(),
            image.source_id()
        );
        return FaceResult::none();
    }
    FaceResult {
        detected: true,
        embedding: Some(face.embedding),
        bbox_area: Some(face.bbox_area),
    }
}

/// Face extractor behind the subprocess protocol (`kind: faces`).
#[derive(Clone, Debug)]
pub struct ExternalFaceExtractor {
    pub process: ExtractorProcess,
}

impl FaceExtractor for ExternalFaceExtractor {
    fn name(&self) -> &str {
        &self.process.name
    }

    fn detect(&self, image: &ImageTensor) -> Result<Vec<FaceDetection>> {
        match self.process.run(image)? {
            ExtractorOutput::Faces(f) => Ok(f),
            other => Err(Error::MalformedOutput {
                name: self.process.name.clone(),
                message: format!("expected faces, got {}", output_kind(&other)),
            }),
        }
    }
}
