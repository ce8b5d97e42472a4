use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use driftbench_core::data::{load_dataset, scan_dataset, source_id_for};
use driftbench_core::metrics::{feature_stats, frechet_distance, FeatureExtractor, FeatureStats, PooledPixels};
use driftbench_core::projectors::{CannyParams, CannyProjector, ConditionMap, GradientMagnitude, IntensityLevels, Projector};
use driftbench_core::Preprocessing;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NativeProjector {
    Canny,
    Depth,
    Seg,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreSettings {
    pub generated: PathBuf,
    pub conditions: Option<PathBuf>,
    pub reference_stats: Option<PathBuf>,
    pub projector: NativeProjector,
    pub side: usize,
    pub grid: usize,
}

#[derive(Debug, Serialize)]
pub struct ScoreReport {
    pub tool_version: String,
    pub config_hash: String,
    pub generated: usize,
    pub fid: Option<f64>,
    pub fid_features: Option<String>,
    pub l1: Option<f64>,
    pub matched: usize,
    pub unmatched_generated: Vec<String>,
    pub unmatched_conditions: Vec<String>,
    pub excluded: BTreeMap<String, String>,
}

/// A stored condition map: `{"height", "width", "values"}`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

fn load_condition(path: &Path, name: &str) -> CliResult<ConditionMap> {
    let is_json = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (h, w, values) = if is_json {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let m: MapFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        (m.height, m.width, m.values)
    } else {
        let img = image::open(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        (h as usize, w as usize, img.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
    };
    ConditionMap::spatial(name, h, w, values).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_conditions(root: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::data(format!("conditions directory {} does not exist", root.display())));
    }
    let mut out = scan_dataset(root)?;
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::data(e.to_string()))?;
        let p = entry.path();
        if entry.file_type().is_file() && p.extension().and_then(|e| e.to_str()) == Some("json") {
            let id = source_id_for(root, p);
            if out.insert(id.clone(), p.to_path_buf()).is_some() {
                return Err(CliError::data(format!("condition `{id}` is stored twice")));
            }
        }
    }
    Ok(out)
}

fn reference_stats(path: &Path, extractor: &PooledPixels, side: usize) -> CliResult<FeatureStats> {
    if path.is_dir() {
        let ds = load_dataset(path, Preprocessing { side })?;
        return Ok(feature_stats(&ds.images, extractor)?);
    }
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let stats: FeatureStats =
        serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    stats.validate()?;
    if let Some(id) = &stats.extractor {
        if *id != extractor.id() {
            return Err(CliError::config(format!(
                "reference statistics were computed with `{id}`, not `{}`",
                extractor.id()
            )));
        }
    }
    Ok(stats)
}

/// Scores generated images against their conditioning maps and a reference
/// distribution.
pub fn run_score(s: &ScoreSettings, hash: &str) -> CliResult<ScoreReport> {
    if s.conditions.is_none() && s.reference_stats.is_none() {
        return Err(CliError::config("give --conditions, --reference-stats, or both"));
    }
    if !s.generated.is_dir() {
        return Err(CliError::data(format!("generated directory {} does not exist", s.generated.display())));
    }
    let generated = load_dataset(&s.generated, Preprocessing { side: s.side })?.images;
    let extractor = PooledPixels { grid: s.grid };
    let (fid, fid_features) = match &s.reference_stats {
        Some(p) => {
            let r = reference_stats(p, &extractor, s.side)?;
            let g = feature_stats(&generated, &extractor)?;
            (Some(frechet_distance(&r, &g)?), Some(extractor.id()))
        }
        None => (None, None),
    };
    let mut report = ScoreReport {
        tool_version: driftbench_core::VERSION.to_string(),
        config_hash: hash.to_string(),
        generated: generated.len(),
        fid,
        fid_features,
        l1: None,
        matched: 0,
        unmatched_generated: Vec::new(),
        unmatched_conditions: Vec::new(),
        excluded: BTreeMap::new(),
    };
    let Some(cond_dir) = &s.conditions else {
        return Ok(report);
    };
    let mut conditions = load_conditions(cond_dir)?;
    let projector: Box<dyn Projector> = match s.projector {
        NativeProjector::Canny => Box::new(CannyProjector::new(CannyParams::default())?),
        NativeProjector::Depth => Box::new(GradientMagnitude::default()),
        NativeProjector::Seg => Box::new(IntensityLevels::default()),
    };
    let mut total = 0.0;
    for img in &generated {
        let Some(path) = conditions.remove(img.source_id()) else {
            report.unmatched_generated.push(img.source_id().to_string());
            continue;
        };
        report.matched += 1;
        let result = load_condition(&path, projector.name()).and_then(|target| {
            let map = projector.apply(img)?;
            Ok(map.compare(&target, projector.comparison())?)
        });
        match result {
            Ok(d) => total += d,
            Err(e) => {
                report.excluded.insert(img.source_id().to_string(), e.message);
            }
        }
    }
    report.unmatched_conditions = conditions.into_keys().collect();
    if report.matched == 0 {
        return Err(CliError::data(format!(
            "no generated image has a condition map ({} generated, {} conditions)",
            report.unmatched_generated.len(),
            report.unmatched_conditions.len()
        )));
    }
    let scored = report.matched - report.excluded.len();
    report.l1 = (scored > 0).then(|| total / scored as f64);
    Ok(report)
}
