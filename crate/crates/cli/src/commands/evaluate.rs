use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use driftbench_core::analysis::{correlation_matrix, emit_reports, MetricMatrix, ReportOptions};
use driftbench_core::autoencoder::{reconstruction_cache_path, RoundtripFailure};
use driftbench_core::cache::{CachedProjector, FeatureCache};
use driftbench_core::data::{load_dataset, write_pair_manifest, FileFailure, ManifestRow};
use driftbench_core::metrics::{
    feature_stats, frechet_distance, identity_similarity, perceptual_distance, psnr, spatial_aggregate, ssim,
    DriftRecord, Exclusion, PixelPca, ToyConvNet,
};
use driftbench_core::probe::{probe_samples, split_by_hash, train_probe, ProbeTask};
use driftbench_core::projectors::{
    CannyProjector, EmbeddingProjector, ExpectedOutput, ExternalEmbedding, ExternalFaceExtractor, ExternalProjector,
    ExtractorProcess, GradientMagnitude, IntensityLevels, MapNormalization, ToyLinearEmbedding,
};
use driftbench_core::synthetic::{make_permutation_ae, shapes_dataset, SyntheticAE};
use driftbench_core::{
    make_pairs, roundtrip_dataset, Autoencoder, ImagePair, ImageTensor, MetricValue, ModelRecord, Preprocessing, Projector,
};
use serde::Serialize;

use crate::config::{
    AdapterConfig, DatasetConfig, DepthSource, EmbeddingSource, ExternalSpec, LoadedConfig, LpipsBackend, ModelConfig,
    RunConfig, SegSource,
};
use crate::error::{CliError, CliResult, ExitClass};

/// Where an evaluation reads its cache and writes its reports.
#[derive(Clone, Debug)]
pub struct EvaluatePaths {
    pub output: PathBuf,
    pub cache: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub source: String,
    pub images: usize,
    pub load_failures: Vec<FileFailure>,
}

#[derive(Debug, Default, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub adapter: String,
    pub pairs: usize,
    pub roundtrip_failures: Vec<RoundtripFailure>,
    pub unmatched_references: Vec<String>,
    pub unmatched_reconstructions: Vec<String>,
    pub exclusions: BTreeMap<String, Vec<Exclusion>>,
    pub timings_ms: BTreeMap<String, u128>,
}

/// Run record written next to the reports.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub dataset: DatasetSummary,
    pub models: Vec<ModelSummary>,
    pub stamps: BTreeMap<String, String>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub cache_corrupt: usize,
    pub outputs: Vec<PathBuf>,
}

struct References {
    images: Vec<ImageTensor>,
    paths: BTreeMap<String, PathBuf>,
    preprocessing: Preprocessing,
    summary: DatasetSummary,
}

fn load_references(loaded: &LoadedConfig, cache: &Path) -> CliResult<References> {
    match &loaded.config.dataset {
        DatasetConfig::Directory { path, side } => {
            let root = loaded.resolve(path);
            if !root.is_dir() {
                return Err(CliError::data(format!("dataset directory {} does not exist", root.display())));
            }
            let pre = Preprocessing { side: *side };
            let ds = load_dataset(&root, pre)?;
            for f in &ds.failures {
                log::warn!("skipped {}: {}", f.path.display(), f.message);
            }
            let paths = ds
                .images
                .iter()
                .zip(&ds.paths)
                .map(|(i, p)| (i.source_id().to_string(), p.clone()))
                .collect();
            Ok(References {
                summary: DatasetSummary {
                    source: root.display().to_string(),
                    images: ds.images.len(),
                    load_failures: ds.failures,
                },
                images: ds.images,
                paths,
                preprocessing: pre,
            })
        }
        DatasetConfig::Shapes { n, side, seed } => {
            let images = shapes_dataset(*n, *side, *seed);
            let dir = cache.join(format!("shapes_n{n}_side{side}_seed{seed}"));
            let mut paths = BTreeMap::new();
            for img in &images {
                let p = dir.join(format!("{}.png", img.source_id()));
                img.save_png(&p)?;
                paths.insert(img.source_id().to_string(), p);
            }
            Ok(References {
                summary: DatasetSummary {
                    source: format!("shapes(n={n},side={side},seed={seed})"),
                    images: images.len(),
                    load_failures: Vec::new(),
                },
                images,
                paths,
                preprocessing: Preprocessing { side: *side },
            })
        }
    }
}

fn process(name: &str, spec: &ExternalSpec) -> ExtractorProcess {
    ExtractorProcess::new(
        name,
        spec.command[0].clone(),
        spec.command[1..].to_vec(),
        Duration::from_secs_f64(spec.timeout_secs),
        spec.max_concurrent,
    )
    .with_input(spec.input)
}

/// Condition projectors and extractors built from the configuration.
pub struct Projectors {
    pub canny: Box<dyn Projector>,
    pub depth: Box<dyn Projector>,
    pub seg: Box<dyn Projector>,
    pub clip: Option<Box<dyn Projector>>,
    pub dinov2: Option<Box<dyn Projector>>,
    pub face: Option<ExternalFaceExtractor>,
    external: BTreeMap<&'static str, bool>,
}

impl Projectors {
    pub fn build(config: &RunConfig) -> CliResult<Self> {
        let mut external = BTreeMap::new();
        let canny: Box<dyn Projector> = Box::new(CannyProjector::new(config.projectors.canny)?);
        let depth: Box<dyn Projector> = match &config.projectors.depth {
            DepthSource::Native { blur_sigma } => Box::new(GradientMagnitude { blur_sigma: *blur_sigma }),
            DepthSource::External(spec) => {
                external.insert("Depth", true);
                let norm = spec.normalization.unwrap_or(MapNormalization::MinMax);
                Box::new(ExternalProjector::new("depth", process("depth", spec), ExpectedOutput::Map(norm)))
            }
        };
        let seg: Box<dyn Projector> = match &config.projectors.seg {
            SegSource::Native { levels, blur_sigma } => Box::new(IntensityLevels {
                levels: *levels,
                blur_sigma: *blur_sigma,
            }),
            SegSource::External(spec) => {
                external.insert("Seg", true);
                Box::new(ExternalProjector::new("seg", process("seg", spec), ExpectedOutput::Labels))
            }
        };
        let mut embedding = |label: &'static str, name: &str, src: &Option<EmbeddingSource>| -> Option<Box<dyn Projector>> {
            let src = src.as_ref()?;
            let extractor: Box<dyn driftbench_core::projectors::EmbeddingExtractor> = match src {
                EmbeddingSource::Toy { seed, grid, dim } => Box::new(ToyLinearEmbedding::new(name, *seed, *grid, *dim)),
                EmbeddingSource::External(spec) => {
                    external.insert(label, true);
                    Box::new(ExternalEmbedding {
                        process: process(name, spec),
                    })
                }
            };
            Some(Box::new(EmbeddingProjector::new(name, extractor)))
        };
        let clip = embedding("CLIP", "clip", &config.extractors.clip);
        let dinov2 = embedding("DINOv2", "dinov2", &config.extractors.dinov2);
        let face = config.extractors.face.as_ref().map(|spec| ExternalFaceExtractor {
            process: process("face", spec),
        });
        Ok(Self {
            canny,
            depth,
            seg,
            clip,
            dinov2,
            face,
            external,
        })
    }

    fn is_external(&self, metric: &str) -> bool {
        self.external.contains_key(metric)
    }
}

fn build_adapter(cfg: &AdapterConfig, references: &[ImageTensor]) -> CliResult<SyntheticAE> {
    Ok(match cfg {
        AdapterConfig::Identity {} => SyntheticAE::identity(),
        AdapterConfig::Blur { sigma } => SyntheticAE::blur(*sigma)?,
        AdapterConfig::Quantize { levels } => SyntheticAE::quantize(*levels)?,
        AdapterConfig::PatchPool { factor } => SyntheticAE::patch_pool(*factor)?,
        AdapterConfig::Permutation { seed } => make_permutation_ae(references, *seed)?,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Everything shared across models during one evaluation.
struct Context<'a> {
    config: &'a RunConfig,
    refs: &'a References,
    projectors: &'a Projectors,
    cache: &'a FeatureCache,
    pca: Option<PixelPca>,
    pca_error: Option<String>,
    cache_root: &'a Path,
}

struct Evaluated {
    record: ModelRecord,
    summary: ModelSummary,
    manifest_rows: Vec<ManifestRow>,
}

fn timed<T>(timings: &mut BTreeMap<String, u128>, key: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    timings.insert(key.to_string(), t.elapsed().as_millis());
    out
}

impl Context<'_> {
    fn pair_model(&self, model: &ModelConfig, summary: &mut ModelSummary) -> CliResult<(Vec<ImagePair>, Option<SyntheticAE>, Vec<ManifestRow>)> {
        let refs = &self.refs.images;
        if let Some(adapter_cfg) = &model.adapter {
            let adapter = build_adapter(adapter_cfg, refs)?;
            summary.adapter = adapter.stamp();
            let outcome = roundtrip_dataset(&adapter, refs, Some(self.cache_root))?;
            if outcome.pairs.is_empty() {
                return Err(CliError::new(
                    ExitClass::Extractor,
                    format!("adapter `{}` failed on every image", adapter.name()),
                ));
            }
            let rows = outcome
                .pairs
                .iter()
                .map(|p| ManifestRow {
                    source_id: p.source_id().to_string(),
                    ref_path: self.refs.paths[p.source_id()].display().to_string(),
                    recon_path: reconstruction_cache_path(self.cache_root, adapter.name(), p.source_id())
                        .display()
                        .to_string(),
                })
                .collect();
            summary.roundtrip_failures = outcome.failures;
            Ok((outcome.pairs, Some(adapter), rows))
        } else {
            let root = model.reconstructions.clone().expect("validated: adapter or reconstructions");
            if !root.is_dir() {
                return Err(CliError::data(format!(
                    "model `{}`: reconstruction directory {} does not exist",
                    model.name,
                    root.display()
                )));
            }
            summary.adapter = format!("precomputed({})", root.display());
            let ds = load_dataset(&root, self.refs.preprocessing)?;
            for f in &ds.failures {
                log::warn!("model `{}`: skipped {}: {}", model.name, f.path.display(), f.message);
            }
            let recon_paths: BTreeMap<String, PathBuf> = ds
                .images
                .iter()
                .zip(&ds.paths)
                .map(|(i, p)| (i.source_id().to_string(), p.clone()))
                .collect();
            let pairing = make_pairs(refs.clone(), ds.images).map_err(|e| CliError::from(e).context(format!("model `{}`", model.name)))?;
            for id in &pairing.unmatched_references {
                log::warn!("model `{}`: no reconstruction for `{id}`", model.name);
            }
            let rows = pairing
                .pairs
                .iter()
                .map(|p| ManifestRow {
                    source_id: p.source_id().to_string(),
                    ref_path: self.refs.paths[p.source_id()].display().to_string(),
                    recon_path: recon_paths[p.source_id()].display().to_string(),
                })
                .collect();
            summary.unmatched_references = pairing.unmatched_references;
            summary.unmatched_reconstructions = pairing.unmatched_reconstructions;
            Ok((pairing.pairs, None, rows))
        }
    }

    /// Mean drift of a projector, or an absence with the reason.
    fn drift(&self, metric: &str, projector: &dyn Projector, pairs: &[ImagePair], summary: &mut ModelSummary) -> CliResult<(MetricValue, Option<DriftRecord>)> {
        let cached = CachedProjector::new(projector, self.cache, self.refs.preprocessing.stamp());
        let record = timed(&mut summary.timings_ms, metric, || DriftRecord::compute(pairs, &cached));
        if !record.exclusions.is_empty() {
            summary.exclusions.insert(metric.to_string(), record.exclusions.clone());
        }
        match record.mean {
            Some(m) => Ok((MetricValue::Value(m), Some(record))),
            None => {
                let first = record.exclusions.first().map(|e| e.reason.clone()).unwrap_or_default();
                if self.projectors.is_external(metric) {
                    return Err(CliError::new(
                        ExitClass::Extractor,
                        format!("{metric} extractor failed on every pair (first error: {first})"),
                    ));
                }
                Ok((MetricValue::absent(format!("every pair excluded: {first}")), None))
            }
        }
    }

    fn latent_probe(&self, task: ProbeTask, adapter: Option<&SyntheticAE>, projector: &dyn Projector) -> MetricValue {
        let Some(adapter) = adapter else {
            return MetricValue::absent("no latent access");
        };
        let result = (|| -> driftbench_core::Result<f64> {
            let samples = probe_samples(&self.refs.images, adapter, projector)?;
            let (train, val, test) = split_by_hash(&samples, |s| s.source_id.as_str());
            let mut cfg = self.config.probe.clone();
            cfg.task = task;
            Ok(train_probe(&train, &val, &test, &cfg)?.test_metric)
        })();
        match result {
            Ok(v) => MetricValue::Value(v),
            Err(e) => MetricValue::absent(format!("probe unavailable: {e}")),
        }
    }

    fn evaluate_model(&self, model: &ModelConfig) -> CliResult<Evaluated> {
        let enabled = self.config.enabled();
        let mut summary = ModelSummary {
            name: model.name.clone(),
            ..Default::default()
        };
        let t = Instant::now();
        let (pairs, adapter, manifest_rows) = self.pair_model(model, &mut summary)?;
        summary.timings_ms.insert("pairing".into(), t.elapsed().as_millis());
        summary.pairs = pairs.len();
        log::info!("model `{}`: {} pairs", model.name, pairs.len());

        let mut rec = ModelRecord::new(&model.name);
        rec.adapter = Some(summary.adapter.clone());
        rec.reported = model.reported.clone();
        let meta = &mut rec.computed.metadata;
        meta.insert("adapter".into(), summary.adapter.clone());
        meta.insert("pairs".into(), pairs.len().to_string());

        let mut values: BTreeMap<&str, MetricValue> = BTreeMap::new();
        if enabled.contains("PSNR") {
            values.insert("PSNR", MetricValue::Value(mean(pairs.iter().map(psnr)).expect("pairs are non-empty")));
        }
        if enabled.contains("SSIM") {
            let p = &self.config.metrics.ssim;
            let v: Vec<f64> = pairs.iter().map(|pair| ssim(pair, p)).collect::<Result<_, _>>()?;
            values.insert("SSIM", MetricValue::Value(mean(v.into_iter()).expect("pairs are non-empty")));
        }
        if enabled.contains("LPIPS") {
            let v = match self.config.metrics.lpips.backend {
                LpipsBackend::None => MetricValue::absent("no backend"),
                LpipsBackend::Toy => {
                    let net = ToyConvNet::new(self.config.metrics.lpips.seed);
                    let d: Vec<f64> = pairs.iter().map(|pair| perceptual_distance(pair, &net)).collect::<Result<_, _>>()?;
                    MetricValue::Value(mean(d.into_iter()).expect("pairs are non-empty"))
                }
            };
            values.insert("LPIPS", v);
        }
        if enabled.contains("rFID") {
            let v = match (&self.pca, &self.pca_error) {
                (Some(pca), _) => {
                    let recon: Vec<ImageTensor> = pairs.iter().map(|p| p.reconstruction().clone()).collect();
                    let refs: Vec<ImageTensor> = pairs.iter().map(|p| p.reference().clone()).collect();
                    match feature_stats(&refs, pca)
                        .and_then(|a| feature_stats(&recon, pca).and_then(|b| frechet_distance(&a, &b)))
                    {
                        Ok(d) => MetricValue::Value(d),
                        Err(e) => MetricValue::absent(format!("rFID unavailable: {e}")),
                    }
                }
                (None, reason) => MetricValue::absent(reason.clone().unwrap_or_default()),
            };
            values.insert("rFID", v);
        }

        let need_spatial = enabled.contains("Spatial");
        let mut records: BTreeMap<&str, DriftRecord> = BTreeMap::new();
        for (metric, projector) in [
            ("Canny", &self.projectors.canny),
            ("Depth", &self.projectors.depth),
            ("Seg", &self.projectors.seg),
        ] {
            if enabled.contains(metric) || need_spatial {
                let (v, r) = self.drift(metric, projector.as_ref(), &pairs, &mut summary)?;
                if let Some(r) = r {
                    records.insert(metric, r);
                }
                if enabled.contains(metric) {
                    values.insert(metric, v);
                }
            }
        }
        if need_spatial {
            let v = spatial_aggregate(records.get("Canny"), records.get("Depth"), records.get("Seg"))
                .map(MetricValue::Value)
                .unwrap_or_else(|| MetricValue::absent("a spatial component is missing"));
            values.insert("Spatial", v);
        }
        for (metric, projector) in [("CLIP", &self.projectors.clip), ("DINOv2", &self.projectors.dinov2)] {
            if !enabled.contains(metric) {
                continue;
            }
            let v = match projector {
                Some(p) => self.drift(metric, p.as_ref(), &pairs, &mut summary)?.0,
                None => MetricValue::absent("no extractor"),
            };
            values.insert(metric, v);
        }
        if enabled.contains("Identity") || enabled.contains("Face@R") {
            let (id, recall) = match &self.projectors.face {
                Some(face) => {
                    let s = timed(&mut summary.timings_ms, "Identity", || identity_similarity(&pairs, face));
                    rec.computed
                        .metadata
                        .insert("face.reference_detections".into(), s.reference_detections.to_string());
                    rec.computed.metadata.insert("face.both_detections".into(), s.both_detections.to_string());
                    (s.mean_cos, s.face_recall)
                }
                None => (MetricValue::absent("no extractor"), MetricValue::absent("no extractor")),
            };
            if enabled.contains("Identity") {
                values.insert("Identity", id);
            }
            if enabled.contains("Face@R") {
                values.insert("Face@R", recall);
            }
        }
        for (metric, task, projector) in [
            ("LatentCanny", ProbeTask::Edges, &self.projectors.canny),
            ("LatentDepth", ProbeTask::Depth, &self.projectors.depth),
        ] {
            if enabled.contains(metric) {
                let v = timed(&mut summary.timings_ms, metric, || {
                    self.latent_probe(task, adapter.as_ref(), projector.as_ref())
                });
                values.insert(metric, v);
            }
        }
        for (k, v) in values {
            rec.computed.set(k, v);
        }
        rec.validate()?;
        Ok(Evaluated {
            record: rec,
            summary,
            manifest_rows,
        })
    }
}

/// Parameter stamps of everything that affects computed values.
fn stamps(config: &RunConfig, refs: &References, projectors: &Projectors, pca: Option<&PixelPca>) -> BTreeMap<String, String> {
    use driftbench_core::metrics::FeatureExtractor;
    let mut s = BTreeMap::new();
    s.insert("preprocessing".into(), refs.preprocessing.stamp());
    s.insert("canny".into(), projectors.canny.stamp());
    s.insert("depth".into(), projectors.depth.stamp());
    s.insert("seg".into(), projectors.seg.stamp());
    if let Some(p) = &projectors.clip {
        s.insert("clip".into(), p.stamp());
    }
    if let Some(p) = &projectors.dinov2 {
        s.insert("dinov2".into(), p.stamp());
    }
    if let Some(f) = &projectors.face {
        s.insert("face".into(), format!("external({} {})", f.process.program, f.process.args.join(" ")));
    }
    let ssim = &config.metrics.ssim;
    s.insert(
        "ssim".into(),
        format!("gaussian(window={},sigma={},k1={},k2={})", ssim.window, ssim.sigma, ssim.k1, ssim.k2),
    );
    s.insert(
        "lpips".into(),
        match config.metrics.lpips.backend {
            LpipsBackend::Toy => format!("toy_convnet(seed={})", config.metrics.lpips.seed),
            LpipsBackend::None => "none".into(),
        },
    );
    if let Some(pca) = pca {
        s.insert("rfid".into(), pca.id());
    }
    s.insert("probe".into(), config.probe.stamp());
    s
}

/// Runs the full evaluation and writes reports to `paths.output`.
pub fn run_evaluate(loaded: &LoadedConfig, paths: &EvaluatePaths) -> CliResult<RunManifest> {
    let config = &loaded.config;
    if config.models.is_empty() {
        return Err(CliError::config("no models configured"));
    }
    std::fs::create_dir_all(&paths.cache).map_err(|e| crate::error::io_err(&paths.cache, e))?;
    let refs = load_references(loaded, &paths.cache)?;
    log::info!("{} reference images from {}", refs.images.len(), refs.summary.source);
    let projectors = Projectors::build(config)?;
    let cache = FeatureCache::new(paths.cache.join("features"))?;
    let (pca, pca_error) = if config.enabled().contains("rFID") {
        match PixelPca::fit(&refs.images, config.metrics.rfid.grid, config.metrics.rfid.components) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(format!("rFID features unavailable: {e}"))),
        }
    } else {
        (None, None)
    };
    let ctx = Context {
        config,
        refs: &refs,
        projectors: &projectors,
        cache: &cache,
        pca,
        pca_error,
        cache_root: &paths.cache,
    };

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    let pair_dir = paths.output.join("pairs");
    std::fs::create_dir_all(&pair_dir).map_err(|e| crate::error::io_err(&pair_dir, e))?;
    for model in &config.models {
        let resolved = ModelConfig {
            reconstructions: model.reconstructions.as_ref().map(|p| loaded.resolve(p)),
            ..model.clone()
        };
        let ev = ctx.evaluate_model(&resolved).map_err(|e| e.context(format!("model `{}`", model.name)))?;
        write_pair_manifest(&pair_dir.join(format!("{}.csv", model.name)), &ev.manifest_rows)?;
        records.push(ev.record);
        summaries.push(ev.summary);
    }

    let stamps = stamps(config, &refs, &projectors, ctx.pca.as_ref());
    let mut metadata = stamps.clone();
    metadata.insert("seed".into(), config.seed.to_string());
    let correlation = if records.len() >= 3 {
        let m = MetricMatrix::from_records(&records)?;
        Some(correlation_matrix(&m, config.report.abs_mode)?)
    } else {
        log::warn!("{} model(s): correlation needs at least 3, skipping it", records.len());
        None
    };
    let opts = ReportOptions {
        scatter: if correlation.is_some() {
            config.report.selection()
        } else {
            driftbench_core::analysis::ScatterSelection::None
        },
        heatmap: config.report.heatmap,
        config_hash: loaded.hash.clone(),
        tool_version: driftbench_core::VERSION.to_string(),
        metadata,
    };
    let outputs = emit_reports(&records, correlation.as_ref(), &opts, &paths.output)?;
    let stats = cache.stats();
    let manifest = RunManifest {
        tool_version: driftbench_core::VERSION.to_string(),
        config_hash: loaded.hash.clone(),
        dataset: refs.summary,
        models: summaries,
        stamps,
        cache_hits: stats.hits,
        cache_misses: stats.misses,
        cache_corrupt: stats.corrupt,
        outputs,
    };
    crate::write_json(&paths.output.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
