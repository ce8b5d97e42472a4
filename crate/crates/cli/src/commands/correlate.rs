use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use driftbench_core::analysis::{
    correlation_matrix, drift_alignment, emit_reports, read_metrics_json, table4_records, AlignmentRow, MetricMatrix,
    ReportOptions, ScatterSelection, DRIFT_COLUMNS,
};
use driftbench_core::ModelRecord;
use serde::Serialize;

use crate::error::{io_err, CliError, CliResult};

/// Minimum number of models a rank correlation is computed over.
pub const MIN_MODELS: usize = 3;

#[derive(Clone, Debug, Serialize)]
pub struct ReportSettings {
    pub abs_mode: bool,
    pub heatmap: bool,
    pub scatter: bool,
}

#[derive(Debug, Serialize)]
pub struct Alignment {
    pub tool_version: String,
    pub config_hash: String,
    pub models: usize,
    pub gfid_models: usize,
    pub rows: Vec<AlignmentRow>,
}

pub fn load_records(files: &[PathBuf]) -> CliResult<Vec<ModelRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| io_err(f, e))?;
        let recs = read_metrics_json(&bytes).map_err(|e| CliError::from(e).context(f.display()))?;
        for r in recs {
            if !seen.insert(r.name.clone()) {
                return Err(CliError::data(format!("model `{}` appears in more than one input", r.name)));
            }
            records.push(r);
        }
    }
    Ok(records)
}

fn options(settings: &ReportSettings, hash: &str) -> ReportOptions {
    ReportOptions {
        scatter: if settings.scatter { ScatterSelection::All } else { ScatterSelection::None },
        heatmap: settings.heatmap,
        config_hash: hash.to_string(),
        ..ReportOptions::default()
    }
}

/// Correlates the records and writes every report. Fewer than
/// [`MIN_MODELS`] models is a data error.
pub fn run_correlate(records: &[ModelRecord], settings: &ReportSettings, hash: &str, out: &Path) -> CliResult<Vec<PathBuf>> {
    if records.len() < MIN_MODELS {
        return Err(CliError::data(format!(
            "correlation needs at least {MIN_MODELS} models, got {}",
            records.len()
        )));
    }
    let m = MetricMatrix::from_records(records)?;
    let c = correlation_matrix(&m, settings.abs_mode)?;
    Ok(emit_reports(records, Some(&c), &options(settings, hash), out)?)
}

/// The bundled 33-model table: reports plus the drift-column alignment.
pub fn run_fixture(settings: &ReportSettings, hash: &str, out: &Path) -> CliResult<Alignment> {
    let records = table4_records()?;
    run_correlate(&records, settings, hash, out)?;
    let m = MetricMatrix::from_records(&records)?;
    let (rows, _, _) = drift_alignment(&m, &DRIFT_COLUMNS)?;
    let alignment = Alignment {
        tool_version: driftbench_core::VERSION.to_string(),
        config_hash: hash.to_string(),
        models: records.len(),
        gfid_models: records.iter().filter(|r| r.reported.contains_key("gFID")).count(),
        rows,
    };
    crate::write_json(&out.join("alignment.json"), &alignment)?;
    Ok(alignment)
}

/// Regenerates reports from stored records; correlation files are only
/// written when there are enough models.
pub fn run_report(records: &[ModelRecord], settings: &ReportSettings, hash: &str, out: &Path) -> CliResult<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(CliError::data("no model records in the input"));
    }
    if records.len() >= MIN_MODELS {
        return run_correlate(records, settings, hash, out);
    }
    log::warn!("{} model(s): correlation needs at least {MIN_MODELS}, skipping it", records.len());
    let mut opts = options(settings, hash);
    opts.scatter = ScatterSelection::None;
    Ok(emit_reports(records, None, &opts, out)?)
}
