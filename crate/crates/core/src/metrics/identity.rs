use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricValue;
use crate::data::ImagePair;
use crate::projectors::{face_extract, FaceExtractor};

pub const NO_REFERENCE_FACES: &str = "no faces in reference set";

/// Identity similarity and face recall over a pair set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySummary {
    /// Mean cosine of identity embeddings over pairs where both images have
    /// a face.
    pub mean_cos: MetricValue,
    /// Pairs with a face in both images divided by pairs with a face in the
    /// reference.
    pub face_recall: MetricValue,
    pub reference_detections: usize,
    pub both_detections: usize,
}

pub fn identity_similarity(pairs: &[ImagePair], face: &dyn FaceExtractor) -> IdentitySummary {
    let results: Vec<_> = pairs
        .par_iter()
        .map(|p| (face_extract(p.reference(), face), face_extract(p.reconstruction(), face)))
        .collect();
    let mut reference_detections = 0;
    let mut cosines = Vec::new();
    for (r, x) in &results {
        if !r.detected {
            continue;
        }
        reference_detections += 1;
        if let (Some(a), Some(b)) = (&r.embedding, &x.embedding) {
            let cos: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            cosines.push(cos.clamp(-1.0, 1.0));
        }
    }
    if reference_detections == 0 {
        return IdentitySummary {
            mean_cos: MetricValue::absent(NO_REFERENCE_FACES),
            face_recall: MetricValue::absent(NO_REFERENCE_FACES),
            reference_detections,
            both_detections: 0,
        };
    }
    let both = cosines.len();
    let mean_cos = if both == 0 {
        MetricValue::absent("no face retained in any reconstruction")
    } else {
        MetricValue::Value(cosines.iter().sum::<f64>() / both as f64)
    };
    IdentitySummary {
        mean_cos,
        face_recall: MetricValue::Value(both as f64 / reference_detections as f64),
        reference_detections,
        both_detections: both,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageTensor;
    use crate::error::Result;
    use crate::projectors::FaceDetection;

    /// Detects a face on any image whose first value is at least the
    /// threshold; the embedding is constant.
    struct Stub {
        threshold: f64,
    }

    impl FaceExtractor for Stub {
        fn name(&self) -> &str {
            "stub"
        }
        fn detect(&self, image: &ImageTensor) -> Result<Vec<FaceDetection>> {
            if image.data()[0] >= self.threshold {
                Ok(vec![FaceDetection {
                    bbox_area: 1.0,
                    embedding: vec![0.6, 0.8],
                }])
            } else {
                Ok(vec![])
            }
        }
    }

    fn pairs(recon_values: &[f64]) -> Vec<ImagePair> {
        recon_values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                ImagePair::new(
                    ImageTensor::filled(format!("p{i}"), 4, 1.0).unwrap(),
                    ImageTensor::filled(format!("p{i}"), 4, v).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn nothing_detected_is_absent_with_reason() {
        let s = identity_similarity(&pairs(&[1.0, 1.0]), &Stub { threshold: 2.0 });
        assert_eq!(s.mean_cos, MetricValue::absent(NO_REFERENCE_FACES));
        assert_eq!(s.face_recall, MetricValue::absent(NO_REFERENCE_FACES));
    }

    #[test]
    fn identical_embeddings() {
        let s = identity_similarity(&pairs(&[1.0, 1.0, 1.0]), &Stub { threshold: 0.5 });
        assert!((s.mean_cos.value().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.face_recall.value(), Some(1.0));
    }

    #[test]
    fn recall_three_of_four() {
        let s = identity_similarity(&pairs(&[1.0, 1.0, 0.0, 1.0]), &Stub { threshold: 0.5 });
        assert_eq!(s.face_recall.value(), Some(0.75));
        assert_eq!(s.reference_detections, 4);
        assert_eq!(s.both_detections, 3);
    }
}
