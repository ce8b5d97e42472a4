//! Pairwise and distributional metrics, the metric registry and per-model
//! records.

mod drift;
mod features;
mod frechet;
mod identity;
mod perceptual;
mod pixel;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use drift::{condition_drift, spatial_aggregate, DriftRecord, Exclusion};
pub use features::{FeatureExtractor, PixelPca, PooledPixels};
pub use frechet::{feature_stats, frechet_distance, FeatureStats, StatsAccumulator};
pub use identity::{identity_similarity, IdentitySummary};
pub use perceptual::{perceptual_distance, FeatureMap, FeatureNetwork, LayerInfo, ToyConvNet};
pub use pixel::{psnr, ssim, SsimParams};

use crate::error::{Error, Result};

/// Whether larger values are better.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// Where a metric's value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Ingested from external reports, never computed here.
    Reported,
    Computed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSpec {
    pub name: &'static str,
    pub direction: Direction,
    pub origin: Origin,
}

const fn spec(name: &'static str, direction: Direction, origin: Origin) -> MetricSpec {
    MetricSpec { name, direction, origin }
}

use Direction::{HigherBetter as Up, LowerBetter as Down};
use Origin::{Computed as C, Reported as R};

/// Every metric name the toolkit knows, in report column order.
pub const REGISTRY: &[MetricSpec] = &[
    spec("gFID", Down, R),
    spec("IS", Up, R),
    spec("Prec", Up, R),
    spec("Rec", Up, R),
    spec("rFID", Down, C),
    spec("PSNR", Up, C),
    spec("SSIM", Up, C),
    spec("LPIPS", Down, C),
    spec("Canny", Down, C),
    spec("Depth", Down, C),
    spec("Seg", Down, C),
    spec("Spatial", Down, C),
    spec("Identity", Up, C),
    spec("Face@R", Up, C),
    spec("CLIP", Up, C),
    spec("DINOv2", Up, C),
    spec("LatentCanny", Down, C),
    spec("LatentDepth", Down, C),
];

pub fn lookup(name: &str) -> Option<&'static MetricSpec> {
    REGISTRY.iter().find(|s| s.name == name)
}

/// Position of a metric in [`REGISTRY`]; unknown names sort last.
pub fn column_rank(name: &str) -> usize {
    REGISTRY.iter().position(|s| s.name == name).unwrap_or(REGISTRY.len())
}

/// A metric result: a number (possibly `+inf` for PSNR of identical
/// images) or an explicit absence.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Value(f64),
    Absent { reason: String },
}

impl MetricValue {
    pub fn absent(reason: impl Into<String>) -> Self {
        MetricValue::Absent { reason: reason.into() }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Absent { .. } => None,
        }
    }
}

impl fmt::Display for MetricValue {
    /// `inf` for `+∞`, `n/a` for absent values, otherwise shortest
    /// round-trip decimal.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) if *v == f64::INFINITY => f.write_str("inf"),
            MetricValue::Value(v) if *v == f64::NEG_INFINITY => f.write_str("-inf"),
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::Absent { .. } => f.write_str("n/a"),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Value(v) if v.is_finite() => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(v) => MetricValue::Value(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => MetricValue::Value(f64::INFINITY),
                "-inf" => MetricValue::Value(f64::NEG_INFINITY),
                _ => MetricValue::absent(t),
            },
        })
    }
}

/// Computed metrics of one model plus the parameter stamp they were
/// computed under. Absence reasons live in `metadata` under
/// `absent.<metric>`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub values: BTreeMap<String, MetricValue>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricVector {
    pub fn set(&mut self, name: &str, value: MetricValue) {
        if let MetricValue::Absent { reason } = &value {
            self.metadata.insert(format!("absent.{name}"), reason.clone());
        }
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).and_then(MetricValue::value)
    }

    /// Every key must be a registry metric; NaN is never a valid value.
    pub fn validate(&self) -> Result<()> {
        for (k, v) in &self.values {
            if lookup(k).is_none() {
                return Err(Error::InvalidParameter(format!("unknown metric `{k}`")));
            }
            if matches!(v, MetricValue::Value(x) if x.is_nan()) {
                return Err(Error::NonFinite(format!("metric `{k}` is NaN")));
            }
        }
        Ok(())
    }
}

/// One autoencoder variant: identity, ingested generation metrics and
/// computed metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    /// Description of the adapter the reconstructions came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    /// Generation metrics borrowed from official reports.
    #[serde(default)]
    pub reported: BTreeMap<String, f64>,
    #[serde(default)]
    pub computed: MetricVector,
}

impl ModelRecord {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in self.reported.keys() {
            if self.computed.values.contains_key(k) {
                return Err(Error::InvalidParameter(format!(
                    "model `{}`: `{k}` is both reported and computed",
                    self.name
                )));
            }
        }
        self.computed.validate()
    }

    /// Reported or computed value by metric name.
    pub fn metric(&self, name: &str) -> Option<MetricValue> {
        if let Some(v) = self.reported.get(name) {
            return Some(MetricValue::Value(*v));
        }
        self.computed.values.get(name).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_value_text_forms() {
        assert_eq!(MetricValue::Value(f64::INFINITY).to_string(), "inf");
        assert_eq!(MetricValue::absent("no extractor").to_string(), "n/a");
        assert_eq!(MetricValue::Value(0.25).to_string(), "0.25");
        let json = serde_json::to_string(&vec![
            MetricValue::Value(1.5),
            MetricValue::Value(f64::INFINITY),
            MetricValue::absent("x"),
        ])
        .unwrap();
        assert_eq!(json, r#"[1.5,"inf","n/a"]"#);
        let back: Vec<MetricValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[1], MetricValue::Value(f64::INFINITY));
    }

    #[test]
    fn record_key_sets_must_be_disjoint() {
        let mut r = ModelRecord::new("m");
        r.reported.insert("gFID".into(), 2.0);
        r.computed.set("PSNR", MetricValue::Value(20.0));
        assert!(r.validate().is_ok());
        r.computed.set("gFID", MetricValue::Value(1.0));
        assert!(r.validate().is_err());
    }

    #[test]
    fn unknown_metric_is_rejected() {
        let mut v = MetricVector::default();
        v.set("Sharpness", MetricValue::Value(1.0));
        assert!(v.validate().is_err());
    }

    #[test]
    fn absence_reason_is_recorded() {
        let mut v = MetricVector::default();
        v.set("CLIP", MetricValue::absent("no extractor"));
        assert_eq!(v.metadata["absent.CLIP"], "no extractor");
        assert_eq!(v.get("CLIP"), None);
    }
}
