//! Rank correlation across metrics, metric tables and report files.

mod fixture;
mod matrix;
mod report;
mod spearman;

pub use fixture::{drift_alignment, table4_records, AlignmentRow, DRIFT_COLUMNS, TABLE4_CSV};
pub use matrix::{correlation_matrix, correlation_matrix_raw, CorrelationMatrix, MetricColumn, MetricMatrix};
pub use report::{emit_reports, heatmap_levels, read_metrics_json, ReportOptions, ScatterSelection};
pub use spearman::{average_ranks, spearman, spearman_dense, Absence};
