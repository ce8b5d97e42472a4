//! Run configuration: a TOML key tree parsed strictly, with `key.path=value`
//! overrides applied before parsing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use driftbench_core::metrics::{lookup, Origin, SsimParams};
use driftbench_core::probe::ProbeTrainConfig;
use driftbench_core::projectors::{CannyParams, InputFormat, MapNormalization};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Computed metrics enabled when the config does not list any.
pub const DEFAULT_METRICS: [&str; 12] = [
    "rFID", "PSNR", "SSIM", "LPIPS", "Canny", "Depth", "Seg", "Spatial", "Identity", "Face@R", "CLIP", "DINOv2",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub projectors: ProjectorsConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub extractors: ExtractorsConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub probe: ProbeTrainConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_cache() -> PathBuf {
    PathBuf::from(".driftbench-cache")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// PNG/JPEG tree, center-cropped and resized to `side`.
    Directory {
        path: PathBuf,
        #[serde(default = "default_side")]
        side: usize,
    },
    /// Seeded synthetic shapes.
    Shapes {
        n: usize,
        side: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_side() -> usize {
    driftbench_core::data::DEFAULT_SIDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub adapter: Option<AdapterConfig>,
    /// Directory of precomputed reconstructions, paired by source id.
    #[serde(default)]
    pub reconstructions: Option<PathBuf>,
    /// Generation metrics taken from external reports.
    #[serde(default)]
    pub reported: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterConfig {
    Identity {},
    Blur { sigma: f64 },
    Quantize { levels: usize },
    PatchPool { factor: usize },
    Permutation {
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "one")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub input: InputFormat,
    /// Spatial maps only; defaults to per-image min-max.
    #[serde(default)]
    pub normalization: Option<MapNormalization>,
}

fn default_timeout() -> f64 {
    60.0
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthSource {
    /// Blurred gradient magnitude.
    Native {
        #[serde(default = "one_f")]
        blur_sigma: f64,
    },
    External(ExternalSpec),
}

impl Default for DepthSource {
    fn default() -> Self {
        DepthSource::Native { blur_sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegSource {
    /// Blurred luma bucketed into intensity levels.
    Native {
        #[serde(default = "eight")]
        levels: usize,
        #[serde(default = "two")]
        blur_sigma: f64,
    },
    External(ExternalSpec),
}

fn eight() -> usize {
    8
}

fn two() -> f64 {
    2.0
}

impl Default for SegSource {
    fn default() -> Self {
        SegSource::Native { levels: 8, blur_sigma: 2.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectorsConfig {
    pub canny: CannyParams,
    pub depth: DepthSource,
    pub seg: SegSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub enabled: Vec<String>,
    pub ssim: SsimParams,
    pub rfid: RfidConfig,
    pub lpips: LpipsConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: DEFAULT_METRICS.iter().map(|s| s.to_string()).collect(),
            ssim: SsimParams::default(),
            rfid: RfidConfig::default(),
            lpips: LpipsConfig::default(),
        }
    }
}

/// rFID features: principal components of pooled pixels fitted on the
/// reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfidConfig {
    pub grid: usize,
    pub components: usize,
}

impl Default for RfidConfig {
    fn default() -> Self {
        Self { grid: 8, components: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpipsBackend {
    /// Fixed-seed toy convolutional network with uniform weights.
    Toy,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpipsConfig {
    pub backend: LpipsBackend,
    pub seed: u64,
}

impl Default for LpipsConfig {
    fn default() -> Self {
        Self {
            backend: LpipsBackend::Toy,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// Fixed-seed random projection of pooled pixels.
    Toy {
        #[serde(default)]
        seed: u64,
        #[serde(default = "eight")]
        grid: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    External(ExternalSpec),
}

fn default_dim() -> usize {
    64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorsConfig {
    pub clip: Option<EmbeddingSource>,
    pub dinov2: Option<EmbeddingSource>,
    pub face: Option<ExternalSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterMode {
    #[default]
    All,
    Pairs,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub scatter: ScatterMode,
    /// Used when `scatter = "pairs"`.
    pub pairs: Vec<[String; 2]>,
    pub heatmap: bool,
    pub abs_mode: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            scatter: ScatterMode::All,
            pairs: Vec::new(),
            heatmap: true,
            abs_mode: true,
        }
    }
}

impl ReportConfig {
    pub fn selection(&self) -> driftbench_core::analysis::ScatterSelection {
        use driftbench_core::analysis::ScatterSelection;
        match self.scatter {
            ScatterMode::All => ScatterSelection::All,
            ScatterMode::None => ScatterSelection::None,
            ScatterMode::Pairs => {
                ScatterSelection::Pairs(self.pairs.iter().map(|[a, b]| (a.clone(), b.clone())).collect())
            }
        }
    }
}

/// A parsed configuration with its hash and the directory relative paths
/// are resolved against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Sets `a.b.c = value` in a TOML tree. The value is parsed as a TOML
/// literal and falls back to a plain string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Hash of the configuration's canonical JSON form. Output and cache
/// locations are left out: they do not affect results.
pub fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    c.cache_dir = PathBuf::new();
    hash_serializable(&c)
}

/// First 16 hex digits of sha256 over the JSON serialization.
pub fn hash_serializable<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

pub fn parse_config(text: &str, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e| CliError::config(format!("config: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(format!("config: {}", e.to_string().trim())))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let config = parse_config(&text, overrides)?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        hash: config_hash(&config),
        config,
        base_dir,
    })
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && name != "."
        && name != ".."
}

fn check_external(what: &str, spec: &ExternalSpec) -> CliResult<()> {
    if spec.command.is_empty() || spec.command[0].is_empty() {
        return Err(CliError::config(format!("{what}: command is empty")));
    }
    if !(spec.timeout_secs > 0.0) || !spec.timeout_secs.is_finite() {
        return Err(CliError::config(format!("{what}: timeout_secs must be positive")));
    }
    if spec.max_concurrent == 0 {
        return Err(CliError::config(format!("{what}: max_concurrent must be at least 1")));
    }
    Ok(())
}

impl RunConfig {
    pub fn enabled(&self) -> BTreeSet<&str> {
        self.metrics.enabled.iter().map(String::as_str).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        match &self.dataset {
            DatasetConfig::Directory { side, .. } | DatasetConfig::Shapes { side, .. }
                if *side < driftbench_core::data::MIN_SIDE =>
            {
                return Err(CliError::config(format!(
                    "dataset side {side} is below the minimum {}",
                    driftbench_core::data::MIN_SIDE
                )));
            }
            DatasetConfig::Shapes { n, .. } if *n < 2 => {
                return Err(CliError::config("shapes dataset needs at least 2 images"));
            }
            _ => {}
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if !valid_name(&m.name) {
                return Err(CliError::config(format!(
                    "model name `{}` may only use letters, digits, `_`, `-` and `.`",
                    m.name
                )));
            }
            if !names.insert(m.name.as_str()) {
                return Err(CliError::config(format!("duplicate model name `{}`", m.name)));
            }
            match (&m.adapter, &m.reconstructions) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(CliError::config(format!(
                        "model `{}` needs exactly one of `adapter` or `reconstructions`",
                        m.name
                    )))
                }
            }
            if let Some(a) = &m.adapter {
                match a {
                    AdapterConfig::Blur { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => {
                        return Err(CliError::config(format!("model `{}`: blur sigma must be >= 0", m.name)));
                    }
                    AdapterConfig::Quantize { levels } if *levels < 2 => {
                        return Err(CliError::config(format!("model `{}`: quantize needs >= 2 levels", m.name)));
                    }
                    AdapterConfig::PatchPool { factor } if *factor == 0 => {
                        return Err(CliError::config(format!("model `{}`: patch_pool factor must be >= 1", m.name)));
                    }
                    _ => {}
                }
            }
            for (k, v) in &m.reported {
                match lookup(k) {
                    Some(s) if s.origin == Origin::Reported => {}
                    _ => {
                        return Err(CliError::config(format!(
                            "model `{}`: `{k}` is not a reported generation metric (gFID, IS, Prec, Rec)",
                            m.name
                        )))
                    }
                }
                if !v.is_finite() {
                    return Err(CliError::config(format!("model `{}`: reported `{k}` is not finite", m.name)));
                }
            }
        }
        for name in &self.metrics.enabled {
            match lookup(name) {
                Some(s) if s.origin == Origin::Computed => {}
                Some(_) => {
                    return Err(CliError::config(format!(
                        "`{name}` is ingested from reports and cannot be enabled for computation"
                    )))
                }
                None => return Err(CliError::config(format!("unknown metric `{name}`"))),
            }
        }
        self.projectors
            .canny
            .validate()
            .map_err(|e| CliError::config(format!("projectors.canny: {e}")))?;
        match &self.projectors.depth {
            DepthSource::Native { blur_sigma } if !(*blur_sigma >= 0.0) => {
                return Err(CliError::config("projectors.depth: blur_sigma must be >= 0"));
            }
            DepthSource::External(spec) => check_external("projectors.depth", spec)?,
            _ => {}
        }
        match &self.projectors.seg {
            SegSource::Native { levels, blur_sigma } if *levels < 2 || !(*blur_sigma >= 0.0) => {
                return Err(CliError::config("projectors.seg: needs levels >= 2 and blur_sigma >= 0"));
            }
            SegSource::External(spec) => check_external("projectors.seg", spec)?,
            _ => {}
        }
        let ssim = &self.metrics.ssim;
        if ssim.window == 0 || ssim.window % 2 == 0 || !(ssim.sigma > 0.0) {
            return Err(CliError::config("metrics.ssim: window must be odd and sigma positive"));
        }
        let rfid = &self.metrics.rfid;
        if rfid.grid == 0 || rfid.components == 0 || rfid.components > 3 * rfid.grid * rfid.grid {
            return Err(CliError::config("metrics.rfid: need grid >= 1 and 1 <= components <= 3*grid^2"));
        }
        for (what, src) in [("extractors.clip", &self.extractors.clip), ("extractors.dinov2", &self.extractors.dinov2)] {
            match src {
                Some(EmbeddingSource::External(spec)) => check_external(what, spec)?,
                Some(EmbeddingSource::Toy { grid, dim, .. }) if *grid == 0 || *dim == 0 => {
                    return Err(CliError::config(format!("{what}: grid and dim must be positive")));
                }
                _ => {}
            }
        }
        if let Some(spec) = &self.extractors.face {
            check_external("extractors.face", spec)?;
        }
        if self.report.scatter == ScatterMode::Pairs && self.report.pairs.is_empty() {
            return Err(CliError::config("report.scatter = \"pairs\" needs report.pairs"));
        }
        self.probe.validate().map_err(|e| CliError::config(format!("probe: {e}")))?;
        Ok(())
    }
}
