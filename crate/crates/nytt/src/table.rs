//! Results tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::AxisPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: String,
    pub points: Vec<AxisPoint>,
    pub seed: u64,
    pub method: String,
    #[serde(flatten)]
    pub status: CellStatus,
    pub metrics: BTreeMap<String, f64>,
    /// Artifact name -> `relative/path#sha256`.
    pub artifacts: BTreeMap<String, String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.is_ok().then(|| self.metrics.get(name).copied()).flatten()
    }

    pub fn point(&self, axis: &str) -> Option<&AxisPoint> {
        self.points.iter().find(|p| p.axis == axis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisInfo {
    pub name: String,
    pub numeric: bool,
}

/// Rank correlation and least-squares slope of a metric along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub axis: String,
    pub metric: String,
    pub method: String,
    /// Labels of the other axes, `axis=label` joined by commas.
    pub group: String,
    /// `None` for the trend of the across-seed means.
    pub seed: Option<u64>,
    pub points: Vec<[f64; 2]>,
    pub spearman: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub experiment: String,
    pub config_fingerprint: String,
    pub axes: Vec<AxisInfo>,
    pub rows: Vec<ResultRow>,
    #[serde(default)]
    pub trends: Vec<Trend>,
}

impl ResultsTable {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(ResultRow::is_ok)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.is_ok())
    }

    /// Metric names present in any row, sorted.
    pub fn metric_names(&self) -> Vec<String> {
        self.rows.iter().flat_map(|r| r.metrics.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Condition keys and method names in first-appearance order.
    pub fn conditions(&self) -> Vec<&str> {
        first_seen(self.rows.iter().map(|r| r.condition.as_str()))
    }

    pub fn methods(&self) -> Vec<&str> {
        first_seen(self.rows.iter().map(|r| r.method.as_str()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        first_seen(self.rows.iter().map(|r| r.seed))
    }

    pub fn row(&self, condition: &str, method: &str, seed: u64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.condition == condition && r.method == method && r.seed == seed)
    }

    /// `(seed, value)` for every successful row of a cell.
    pub fn per_seed(&self, condition: &str, method: &str, metric: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.condition == condition && r.method == method)
            .filter_map(|r| r.metric(metric).map(|v| (r.seed, v)))
            .collect()
    }

    pub fn mean(&self, condition: &str, method: &str, metric: &str) -> Option<f64> {
        let v = self.per_seed(condition, method, metric);
        (!v.is_empty()).then(|| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64)
    }
}

fn first_seen<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}
