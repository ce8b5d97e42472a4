use serde::Serialize;

use super::matrix::{correlation_matrix, CorrelationMatrix, MetricMatrix};
use crate::error::{Error, Result};
use crate::metrics::{MetricValue, ModelRecord};

/// Published per-variant reconstruction and drift table (33 autoencoder
/// variants). `-` marks cells with no reported value.
pub const TABLE4_CSV: &str = include_str!("table4_fixture.csv");

/// Drift-style columns used when comparing how well reconstruction and
/// generation scores track condition drift.
pub const DRIFT_COLUMNS: [&str; 4] = ["Spatial", "Identity", "CLIP", "DINOv2"];

/// Parses the shipped table into model records. gFID is an ingested
/// generation metric; every other column is treated as computed.
pub fn table4_records() -> Result<Vec<ModelRecord>> {
    let mut reader = csv::Reader::from_reader(TABLE4_CSV.as_bytes());
    let headers = reader.headers()?.clone();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let mut rec = ModelRecord::new(&row[1]);
        rec.computed.metadata.insert("group".into(), row[0].to_string());
        for (name, cell) in headers.iter().zip(row.iter()).skip(2) {
            let value = if cell == "-" {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|e| {
                    Error::InvalidParameter(format!("fixture cell `{cell}` in column {name}: {e}"))
                })?)
            };
            match (name, value) {
                ("gFID", Some(v)) => {
                    rec.reported.insert(name.to_string(), v);
                }
                ("gFID", None) => {}
                (_, Some(v)) => rec.computed.set(name, MetricValue::Value(v)),
                (_, None) => rec.computed.set(name, MetricValue::absent("not reported")),
            }
        }
        records.push(rec);
    }
    Ok(records)
}

/// |ρ| of PSNR, rFID and gFID against one drift column. PSNR and rFID use
/// every model; gFID uses the models that carry a gFID value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub column: String,
    pub psnr: Option<f64>,
    pub rfid: Option<f64>,
    pub gfid: Option<f64>,
}

pub fn drift_alignment(matrix: &MetricMatrix, columns: &[&str]) -> Result<(Vec<AlignmentRow>, CorrelationMatrix, CorrelationMatrix)> {
    let all = correlation_matrix(matrix, true)?;
    let subset = correlation_matrix(&matrix.subset_with("gFID")?, true)?;
    let rows = columns
        .iter()
        .map(|c| AlignmentRow {
            column: c.to_string(),
            psnr: all.get("PSNR", c),
            rfid: all.get("rFID", c),
            gfid: subset.get("gFID", c),
        })
        .collect();
    Ok((rows, all, subset))
}
