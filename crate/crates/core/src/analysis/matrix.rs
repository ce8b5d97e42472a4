use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::spearman::{spearman, Absence};
use crate::error::{Error, Result};
use crate::metrics::{column_rank, lookup, Direction, ModelRecord};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub direction: Direction,
}

/// Models × metrics table with absent cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub models: Vec<String>,
    pub metrics: Vec<MetricColumn>,
    /// `values[model][metric]`
    pub values: Vec<Vec<Option<f64>>>,
}

impl MetricMatrix {
    pub fn new(models: Vec<String>, metrics: Vec<MetricColumn>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if values.len() != models.len() || values.iter().any(|r| r.len() != metrics.len()) {
            return Err(Error::DimensionMismatch("metric matrix shape".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &metrics {
            if !seen.insert(&m.name) {
                return Err(Error::InvalidParameter(format!("duplicate metric column `{}`", m.name)));
            }
        }
        Ok(Self { models, metrics, values })
    }

    /// Columns are every registry metric present in at least one record,
    /// in registry order; directions come from the registry.
    pub fn from_records(records: &[ModelRecord]) -> Result<Self> {
        let mut names = BTreeSet::new();
        for r in records {
            r.validate()?;
            names.extend(r.reported.keys().cloned());
            names.extend(r.computed.values.keys().cloned());
        }
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort_by_key(|n| column_rank(n));
        let metrics = names
            .iter()
            .map(|n| MetricColumn {
                name: n.clone(),
                direction: lookup(n).map(|s| s.direction).unwrap_or(Direction::HigherBetter),
            })
            .collect();
        let values = records
            .iter()
            .map(|r| names.iter().map(|n| r.metric(n).and_then(|v| v.value())).collect())
            .collect();
        Self::new(records.iter().map(|r| r.name.clone()).collect(), metrics, values)
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Column with lower-is-better metrics negated so larger always means
    /// better.
    pub fn oriented_column(&self, j: usize) -> Vec<Option<f64>> {
        let sign = match self.metrics[j].direction {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        };
        self.column(j).into_iter().map(|v| v.map(|x| sign * x)).collect()
    }

    /// Rows whose value in `metric` is present.
    pub fn subset_with(&self, metric: &str) -> Result<Self> {
        let j = self
            .metric_index(metric)
            .ok_or_else(|| Error::InvalidParameter(format!("no column `{metric}`")))?;
        let keep: Vec<usize> = (0..self.models.len()).filter(|&i| self.values[i][j].is_some()).collect();
        Self::new(
            keep.iter().map(|&i| self.models[i].clone()).collect(),
            self.metrics.clone(),
            keep.iter().map(|&i| self.values[i].clone()).collect(),
        )
    }
}

/// Symmetric matrix of Spearman coefficients; `None` marks absent cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub metrics: Vec<String>,
    pub rho: Vec<Vec<Option<f64>>>,
    /// Reason per absent cell, keyed `"A|B"`.
    pub reasons: BTreeMap<String, String>,
    pub abs_mode: bool,
    /// Whether lower-is-better columns were negated before ranking.
    pub direction_normalized: bool,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.metrics.iter().position(|m| m == a)?;
        let j = self.metrics.iter().position(|m| m == b)?;
        self.rho[i][j]
    }

    pub fn reason(&self, a: &str, b: &str) -> Option<&str> {
        self.reasons.get(&format!("{a}|{b}")).map(String::as_str)
    }
}

fn column_absence(col: &[Option<f64>]) -> Option<Absence> {
    let present: Vec<f64> = col.iter().flatten().copied().collect();
    if present.len() < 3 {
        return Some(Absence::TooFewValues { n: present.len() });
    }
    if present.iter().all(|v| *v == present[0]) {
        return Some(Absence::ConstantColumn);
    }
    None
}

fn build(m: &MetricMatrix, abs_mode: bool, normalize: bool) -> Result<CorrelationMatrix> {
    if m.models.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: m.models.len(),
        });
    }
    let k = m.metrics.len();
    let cols: Vec<Vec<Option<f64>>> = (0..k)
        .map(|j| if normalize { m.oriented_column(j) } else { m.column(j) })
        .collect();
    let col_absence: Vec<Option<Absence>> = cols.iter().map(|c| column_absence(c)).collect();
    let names: Vec<String> = m.metrics.iter().map(|c| c.name.clone()).collect();
    let mut rho = vec![vec![None; k]; k];
    let mut reasons = BTreeMap::new();
    for i in 0..k {
        for j in i..k {
            let cell = match (&col_absence[i], &col_absence[j]) {
                (Some(a), _) => Err(format!("{}: {a}", names[i])),
                (_, Some(b)) => Err(format!("{}: {b}", names[j])),
                _ if i == j => Ok(1.0),
                _ => spearman(&cols[i], &cols[j]).map_err(|e| e.to_string()),
            };
            match cell {
                Ok(v) => {
                    let v = if abs_mode { v.abs() } else { v };
                    rho[i][j] = Some(v);
                    rho[j][i] = Some(v);
                }
                Err(reason) => {
                    reasons.insert(format!("{}|{}", names[i], names[j]), reason.clone());
                    reasons.insert(format!("{}|{}", names[j], names[i]), reason);
                }
            }
        }
    }
    Ok(CorrelationMatrix {
        metrics: names,
        rho,
        reasons,
        abs_mode,
        direction_normalized: normalize,
    })
}

/// Pairwise Spearman over models present in both columns, after negating
/// lower-is-better columns. Columns with fewer than three values or no rank
/// variance become absent rows/columns; absence is never fatal.
pub fn correlation_matrix(m: &MetricMatrix, abs_mode: bool) -> Result<CorrelationMatrix> {
    build(m, abs_mode, true)
}

/// Like [`correlation_matrix`] but on raw values (no direction flip).
pub fn correlation_matrix_raw(m: &MetricMatrix) -> Result<CorrelationMatrix> {
    build(m, false, false)
}
