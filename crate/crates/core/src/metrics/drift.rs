use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::error::Result;
use crate::projectors::{Comparison, Projector};

/// Drift of one pair under one projector: `‖φ(x) − φ(x̂)‖` for spatial
/// projectors, cosine similarity for embeddings.
pub fn condition_drift(pair: &ImagePair, projector: &dyn Projector) -> Result<f64> {
    let a = projector.apply(pair.reference())?;
    let b = projector.apply(pair.reconstruction())?;
    a.compare(&b, projector.comparison())
}

/// A pair left out of a projector's aggregate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub source_id: String,
    pub reason: String,
}

/// Per-pair drift values of one projector over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub projector_name: String,
    pub comparison: Comparison,
    /// Ordered as the input pairs.
    pub per_pair: Vec<(String, f64)>,
    /// Arithmetic mean of `per_pair`; `None` when every pair was excluded.
    pub mean: Option<f64>,
    pub excluded: usize,
    pub exclusions: Vec<Exclusion>,
}

impl DriftRecord {
    /// Applies `projector` to every pair. Failures exclude the pair and are
    /// counted; they never abort the record.
    pub fn compute(pairs: &[ImagePair], projector: &dyn Projector) -> Self {
        let results: Vec<Result<f64>> = pairs.par_iter().map(|p| condition_drift(p, projector)).collect();
        let mut per_pair = Vec::with_capacity(pairs.len());
        let mut exclusions = Vec::new();
        for (pair, r) in pairs.iter().zip(results) {
            match r {
                Ok(v) => per_pair.push((pair.source_id().to_string(), v)),
                Err(e) => {
                    log::warn!("projector `{}` excluded `{}`: {e}", projector.name(), pair.source_id());
                    exclusions.push(Exclusion {
                        source_id: pair.source_id().to_string(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        Self::from_values(projector.name(), projector.comparison(), per_pair, exclusions)
    }

    pub fn from_values(
        projector_name: impl Into<String>,
        comparison: Comparison,
        per_pair: Vec<(String, f64)>,
        exclusions: Vec<Exclusion>,
    ) -> Self {
        let mean = if per_pair.is_empty() {
            None
        } else {
            Some(per_pair.iter().map(|(_, v)| v).sum::<f64>() / per_pair.len() as f64)
        };
        Self {
            projector_name: projector_name.into(),
            comparison,
            per_pair,
            mean,
            excluded: exclusions.len(),
            exclusions,
        }
    }
}

/// Mean of the edge, depth and segmentation drift means; absent if any of
/// the three is missing.
pub fn spatial_aggregate(
    canny: Option<&DriftRecord>,
    depth: Option<&DriftRecord>,
    seg: Option<&DriftRecord>,
) -> Option<f64> {
    let (c, d, s) = (canny?.mean?, depth?.mean?, seg?.mean?);
    Some((c + d + s) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(mean: f64) -> DriftRecord {
        DriftRecord::from_values("p", Comparison::L1Mean, vec![("a".into(), mean)], vec![])
    }

    #[test]
    fn aggregate_is_mean_of_means() {
        let (c, d, s) = (record(0.3), record(0.1), record(0.2));
        assert!((spatial_aggregate(Some(&c), Some(&d), Some(&s)).unwrap() - 0.2).abs() < 1e-15);
        let z = record(0.0);
        assert_eq!(spatial_aggregate(Some(&z), Some(&z), Some(&z)), Some(0.0));
        assert_eq!(spatial_aggregate(Some(&c), None, Some(&s)), None);
    }

    #[test]
    fn published_row_rounds_to_reported_aggregate() {
        // canny 0.1285, depth 0.0275, seg 0.0568 -> 0.0709 (4 decimals)
        let v = spatial_aggregate(Some(&record(0.1285)), Some(&record(0.0275)), Some(&record(0.0568))).unwrap();
        assert_eq!(format!("{v:.4}"), "0.0709");
    }

    #[test]
    fn mean_matches_values() {
        let r = DriftRecord::from_values(
            "p",
            Comparison::L1Mean,
            vec![("a".into(), 0.1), ("b".into(), 0.4), ("c".into(), 0.7)],
            vec![],
        );
        assert!((r.mean.unwrap() - 0.4).abs() < 1e-12);
        let empty = DriftRecord::from_values("p", Comparison::L1Mean, vec![], vec![]);
        assert_eq!(empty.mean, None);
    }
}
