use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::{CorrelationMatrix, MetricMatrix};
use crate::error::{Error, Result};
use crate::metrics::{lookup, Direction, MetricValue, ModelRecord, Origin};

/// Which metric pairs get a scatter CSV.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ScatterSelection {
    /// Every unordered pair of metric columns.
    #[default]
    All,
    Pairs(Vec<(String, String)>),
    None,
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub scatter: ScatterSelection,
    pub heatmap: bool,
    /// Stamped into every emitted file.
    pub config_hash: String,
    pub tool_version: String,
    /// Extra key/value metadata for metrics.json (parameter stamps etc.).
    pub metadata: BTreeMap<String, String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            scatter: ScatterSelection::All,
            heatmap: true,
            config_hash: String::new(),
            tool_version: crate::VERSION.to_string(),
            metadata: BTreeMap::new(),
        }
    }
}

impl ReportOptions {
    fn stamp_line(&self) -> String {
        format!("# driftbench {} config_hash={}\n", self.tool_version, self.config_hash)
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => MetricValue::Value(x).to_string(),
        None => "n/a".to_string(),
    }
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn metrics_csv(m: &MetricMatrix, opts: &ReportOptions) -> Result<Vec<u8>> {
    let mut buf = opts.stamp_line().into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["model".to_string()];
        header.extend(m.metrics.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (name, row) in m.models.iter().zip(&m.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| fmt_cell(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("metrics.csv", e))?;
    }
    Ok(buf)
}

fn metrics_long_csv(records: &[ModelRecord], m: &MetricMatrix, opts: &ReportOptions) -> Result<Vec<u8>> {
    let mut buf = opts.stamp_line().into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["model", "metric", "origin", "value", "reason"])?;
        for r in records {
            for col in &m.metrics {
                let (origin, value) = if let Some(v) = r.reported.get(&col.name) {
                    ("reported", MetricValue::Value(*v))
                } else if let Some(v) = r.computed.values.get(&col.name) {
                    ("computed", v.clone())
                } else {
                    continue;
                };
                let reason = match &value {
                    MetricValue::Absent { reason } => reason.clone(),
                    MetricValue::Value(_) => String::new(),
                };
                w.write_record([r.name.as_str(), col.name.as_str(), origin, &value.to_string(), &reason])?;
            }
        }
        w.flush().map_err(|e| Error::io("metrics_long.csv", e))?;
    }
    Ok(buf)
}

#[derive(Serialize)]
struct JsonModel<'a> {
    name: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    adapter: Option<&'a str>,
    reported: BTreeMap<&'a str, MetricValue>,
    computed: &'a BTreeMap<String, MetricValue>,
    metadata: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    tool_version: &'a str,
    config_hash: &'a str,
    metadata: &'a BTreeMap<String, String>,
    models: Vec<JsonModel<'a>>,
}

fn metrics_json(records: &[ModelRecord], opts: &ReportOptions) -> Result<Vec<u8>> {
    let report = JsonReport {
        tool_version: &opts.tool_version,
        config_hash: &opts.config_hash,
        metadata: &opts.metadata,
        models: records
            .iter()
            .map(|r| JsonModel {
                name: &r.name,
                adapter: r.adapter.as_deref(),
                reported: r.reported.iter().map(|(k, v)| (k.as_str(), MetricValue::Value(*v))).collect(),
                computed: &r.computed.values,
                metadata: &r.computed.metadata,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&report)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Deserialize)]
struct OwnedModel {
    name: String,
    #[serde(default)]
    adapter: Option<String>,
    #[serde(default)]
    reported: BTreeMap<String, MetricValue>,
    #[serde(default)]
    computed: BTreeMap<String, MetricValue>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct OwnedReport {
    models: Vec<OwnedModel>,
}

/// Model records from a metrics.json document. Absence reasons are
/// restored from the `absent.<metric>` metadata entries.
pub fn read_metrics_json(bytes: &[u8]) -> Result<Vec<ModelRecord>> {
    let report: OwnedReport = serde_json::from_slice(bytes)?;
    report
        .models
        .into_iter()
        .map(|m| {
            let mut rec = ModelRecord::new(m.name);
            rec.adapter = m.adapter;
            for (k, v) in m.reported {
                match v.value() {
                    Some(x) => {
                        rec.reported.insert(k, x);
                    }
                    None => return Err(Error::Serialization(format!("reported `{k}` of `{}` has no value", rec.name))),
                }
            }
            rec.computed.metadata = m.metadata;
            for (k, v) in m.computed {
                let v = match v {
                    MetricValue::Absent { .. } => MetricValue::absent(
                        rec.computed.metadata.get(&format!("absent.{k}")).cloned().unwrap_or_else(|| "n/a".into()),
                    ),
                    v => v,
                };
                rec.computed.set(&k, v);
            }
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

fn correlation_csv(c: &CorrelationMatrix, opts: &ReportOptions) -> Result<Vec<u8>> {
    let mut buf = opts.stamp_line().into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["metric".to_string()];
        header.extend(c.metrics.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in c.metrics.iter().zip(&c.rho) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| fmt_cell(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("correlation.csv", e))?;
    }
    Ok(buf)
}

#[derive(Serialize)]
struct JsonCorrelation<'a> {
    tool_version: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    matrix: &'a CorrelationMatrix,
}

fn scatter_csv(m: &MetricMatrix, a: usize, b: usize, opts: &ReportOptions) -> Result<Vec<u8>> {
    let mut buf = opts.stamp_line().into_bytes();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["model", &m.metrics[a].name, &m.metrics[b].name])?;
        for (name, row) in m.models.iter().zip(&m.values) {
            if let (Some(x), Some(y)) = (row[a], row[b]) {
                w.write_record([name.clone(), fmt_cell(Some(x)), fmt_cell(Some(y))])?;
            }
        }
        w.flush().map_err(|e| Error::io("scatter", e))?;
    }
    Ok(buf)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c == '/' || c == '\\' || c.is_whitespace() { '_' } else { c })
        .collect()
}

fn leaderboard_cell(v: Option<f64>, name: &str) -> String {
    match v {
        None => "n/a".into(),
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) if matches!(name, "PSNR" | "gFID" | "IS") => format!("{x:.2}"),
        Some(x) => format!("{x:.4}"),
    }
}

fn leaderboard_md(m: &MetricMatrix, opts: &ReportOptions) -> String {
    let mut s = format!(
        "<!-- driftbench {} config_hash={} -->\n\n| Model |",
        opts.tool_version, opts.config_hash
    );
    for col in &m.metrics {
        let arrow = match col.direction {
            Direction::HigherBetter => "↑",
            Direction::LowerBetter => "↓",
        };
        let tag = match lookup(&col.name).map(|s| s.origin) {
            Some(Origin::Reported) => "*",
            _ => "",
        };
        s.push_str(&format!(" {}{tag} {arrow} |", col.name));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(m.metrics.len()));
    s.push('\n');
    let best: Vec<Option<f64>> = (0..m.metrics.len())
        .map(|j| {
            let present = m.column(j).into_iter().flatten();
            match m.metrics[j].direction {
                Direction::HigherBetter => present.reduce(f64::max),
                Direction::LowerBetter => present.reduce(f64::min),
            }
        })
        .collect();
    for (name, row) in m.models.iter().zip(&m.values) {
        s.push_str(&format!("| {name} |"));
        for (j, v) in row.iter().enumerate() {
            let cell = leaderboard_cell(*v, &m.metrics[j].name);
            if v.is_some() && *v == best[j] && m.models.len() > 1 {
                s.push_str(&format!(" **{cell}** |"));
            } else {
                s.push_str(&format!(" {cell} |"));
            }
        }
        s.push('\n');
    }
    if m.metrics.iter().any(|c| lookup(&c.name).map(|s| s.origin) == Some(Origin::Reported)) {
        s.push_str("\n\\* taken from external reports, not computed.\n");
    }
    s
}

const CELL: usize = 24;

/// Colour scale lower bound for the heatmap; |ρ| at or below maps to the
/// bottom colour.
fn scale_floor(c: &CorrelationMatrix) -> f64 {
    if c.abs_mode {
        0.8
    } else {
        -1.0
    }
}

/// Heatmap cell intensities in `[0,1]` (`None` for absent cells), after
/// mapping ρ onto the colour scale.
pub fn heatmap_levels(c: &CorrelationMatrix) -> Vec<Vec<Option<f64>>> {
    let lo = scale_floor(c);
    c.rho
        .iter()
        .map(|row| row.iter().map(|v| v.map(|r| ((r - lo) / (1.0 - lo)).clamp(0.0, 1.0))).collect())
        .collect()
}

fn colour(t: f64) -> [u8; 3] {
    // dark blue -> teal -> yellow
    const STOPS: [[f64; 3]; 3] = [[40.0, 30.0, 110.0], [30.0, 150.0, 140.0], [250.0, 230.0, 40.0]];
    let x = t * 2.0;
    let (i, f) = if x >= 2.0 { (1, 1.0) } else { (x.floor() as usize, x.fract()) };
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    }
    out
}

fn heatmap_png(c: &CorrelationMatrix, opts: &ReportOptions, path: &Path) -> Result<()> {
    let n = c.metrics.len().max(1);
    let side = (n * CELL) as u32;
    let mut pixels = vec![0u8; (side * side * 3) as usize];
    let levels = heatmap_levels(c);
    for (i, row) in levels.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let rgb = v.map(colour).unwrap_or([160, 160, 160]);
            for y in i * CELL..(i + 1) * CELL {
                for x in j * CELL..(j + 1) * CELL {
                    let o = (y * side as usize + x) * 3;
                    pixels[o..o + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::EncodingError| Error::Serialization(format!("heatmap: {e}"));
    let mut enc = png::Encoder::new(BufWriter::new(file), side, side);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("config_hash".into(), opts.config_hash.clone()).map_err(png_err)?;
    enc.add_text_chunk("metrics".into(), c.metrics.join(",")).map_err(png_err)?;
    enc.add_text_chunk(
        "scale".into(),
        format!("{}..1.0 abs_mode={}", scale_floor(c), c.abs_mode),
    )
    .map_err(png_err)?;
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&pixels).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

/// Writes metrics.csv (one row per model), metrics_long.csv, metrics.json,
/// correlation.csv/.json, scatter CSVs `<A>_vs_<B>.csv`, leaderboard.md and
/// optionally heatmap.png. Without a correlation matrix the correlation
/// files and the heatmap are skipped. Output bytes depend only on the inputs.
pub fn emit_reports(
    records: &[ModelRecord],
    correlation: Option<&CorrelationMatrix>,
    opts: &ReportOptions,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let m = MetricMatrix::from_records(records)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = out_dir.join(name);
        write_file(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    emit("metrics.csv", &metrics_csv(&m, opts)?)?;
    emit("metrics_long.csv", &metrics_long_csv(records, &m, opts)?)?;
    emit("metrics.json", &metrics_json(records, opts)?)?;
    if let Some(correlation) = correlation {
        emit("correlation.csv", &correlation_csv(correlation, opts)?)?;
        let mut cj = serde_json::to_vec_pretty(&JsonCorrelation {
            tool_version: &opts.tool_version,
            config_hash: &opts.config_hash,
            matrix: correlation,
        })?;
        cj.push(b'\n');
        emit("correlation.json", &cj)?;
    }

    let pairs: Vec<(usize, usize)> = match &opts.scatter {
        ScatterSelection::None => vec![],
        ScatterSelection::All => {
            let k = m.metrics.len();
            (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect()
        }
        ScatterSelection::Pairs(list) => list
            .iter()
            .map(|(a, b)| {
                let find = |n: &str| {
                    m.metric_index(n)
                        .ok_or_else(|| Error::InvalidParameter(format!("scatter metric `{n}` not in table")))
                };
                Ok((find(a)?, find(b)?))
            })
            .collect::<Result<_>>()?,
    };
    for (a, b) in pairs {
        let name = format!("{}_vs_{}.csv", file_safe(&m.metrics[a].name), file_safe(&m.metrics[b].name));
        emit(&name, &scatter_csv(&m, a, b, opts)?)?;
    }
    emit("leaderboard.md", leaderboard_md(&m, opts).as_bytes())?;
    if let (true, Some(correlation)) = (opts.heatmap, correlation) {
        let p = out_dir.join("heatmap.png");
        heatmap_png(correlation, opts, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::correlation_matrix;

    fn records() -> Vec<ModelRecord> {
        let mut out = Vec::new();
        for (name, psnr, ssim, canny) in [("a", 30.0, 0.9, 0.1), ("b", 25.0, 0.8, 0.2)] {
            let mut r = ModelRecord::new(name);
            r.computed.set("PSNR", MetricValue::Value(psnr));
            r.computed.set("SSIM", MetricValue::Value(ssim));
            r.computed.set("Canny", MetricValue::Value(canny));
            out.push(r);
        }
        out
    }

    fn identity_corr() -> CorrelationMatrix {
        CorrelationMatrix {
            metrics: vec!["A".into(), "B".into()],
            rho: vec![vec![Some(1.0), Some(1.0)], vec![Some(1.0), Some(1.0)]],
            reasons: BTreeMap::new(),
            abs_mode: true,
            direction_normalized: true,
        }
    }

    #[test]
    fn two_models_three_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&records(), Some(&identity_corr()), &ReportOptions::default(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(data_rows, 2);
        let scatter = files.iter().filter(|p| p.to_string_lossy().contains("_vs_")).count();
        assert_eq!(scatter, 3);
        assert!(dir.path().join("PSNR_vs_SSIM.csv").exists());
        assert!(dir.path().join("heatmap.png").exists());
    }

    #[test]
    fn missing_correlation_skips_its_files() {
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&records(), None, &ReportOptions::default(), dir.path()).unwrap();
        assert!(dir.path().join("metrics.csv").exists());
        assert!(!dir.path().join("correlation.csv").exists());
        assert!(!dir.path().join("heatmap.png").exists());
    }

    #[test]
    fn metrics_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = records();
        recs[0].computed.set("LPIPS", MetricValue::absent("no backend"));
        recs[1].computed.set("LPIPS", MetricValue::Value(0.1));
        recs[1].computed.set("PSNR", MetricValue::Value(f64::INFINITY));
        recs[1].reported.insert("gFID".into(), 1.5);
        emit_reports(&recs, None, &ReportOptions::default(), dir.path()).unwrap();
        let back = read_metrics_json(&fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn reports_are_byte_stable() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let opts = ReportOptions {
            config_hash: "abc".into(),
            ..ReportOptions::default()
        };
        emit_reports(&records(), Some(&identity_corr()), &opts, d1.path()).unwrap();
        emit_reports(&records(), Some(&identity_corr()), &opts, d2.path()).unwrap();
        for f in ["metrics.csv", "metrics.json", "correlation.csv", "leaderboard.md", "heatmap.png"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let json: serde_json::Value = serde_json::from_slice(&fs::read(d1.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(json["config_hash"], "abc");
        assert_eq!(json["models"][0]["computed"]["PSNR"], 30.0);
    }

    #[test]
    fn identity_heatmap_is_all_top() {
        let levels = heatmap_levels(&identity_corr());
        assert!(levels.iter().flatten().all(|v| *v == Some(1.0)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        heatmap_png(&identity_corr(), &ReportOptions::default(), &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        let top = colour(1.0);
        assert!(img.pixels().all(|px| px.0 == top));
    }

    #[test]
    fn correlation_csv_is_square_with_names() {
        let mut recs = records();
        let mut r = ModelRecord::new("c");
        r.computed.set("PSNR", MetricValue::Value(f64::INFINITY));
        r.computed.set("SSIM", MetricValue::Value(1.0));
        r.computed.set("Canny", MetricValue::Value(0.0));
        recs.push(r);
        let m = MetricMatrix::from_records(&recs).unwrap();
        let c = correlation_matrix(&m, true).unwrap();
        let text = String::from_utf8(correlation_csv(&c, &ReportOptions::default()).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines[0], "metric,PSNR,SSIM,Canny");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "PSNR,1,1,1");
    }
}
