//! CSV and JSON emission of metric reports, and aggregation across seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluation::{MetricsDetail, MetricsReport, HISTOGRAM_BINS};

/// Scalar columns of a report, in CSV order.
pub const SCALAR_COLUMNS: [&str; 10] = [
    "downstream_acc",
    "interpretability_auc",
    "faithfulness",
    "opposite_faithfulness",
    "random_faithfulness",
    "faithfulness_gap",
    "w1_global",
    "w1_local",
    "wasserstein_gap",
    "sparsity_index",
];

const WASSERSTEIN_COLUMNS: [&str; 3] = ["w1_global", "w1_local", "wasserstein_gap"];

pub fn scalars(r: &MetricsReport) -> [Option<f64>; 10] {
    [
        r.downstream_acc,
        r.interpretability_auc,
        r.faithfulness,
        r.opposite_faithfulness,
        r.random_faithfulness,
        r.faithfulness_gap,
        r.w1_global,
        r.w1_local,
        r.wasserstein_gap,
        r.sparsity_index,
    ]
}

fn histogram_columns() -> impl Iterator<Item = String> {
    (0..HISTOGRAM_BINS).map(|i| format!("hist_{i}"))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column layout; node-task reports leave out the continuity columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub wasserstein: bool,
}

impl Layout {
    fn columns(&self) -> impl Iterator<Item = (usize, &'static str)> + '_ {
        SCALAR_COLUMNS
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| self.wasserstein || !WASSERSTEIN_COLUMNS.contains(c))
    }
}

/// Header plus one row per `(label, report)`; `label` names the first column
/// (`seed`, or a sweep value).
pub fn reports_csv(label: &str, rows: &[(String, &MetricsReport)], layout: Layout) -> String {
    let mut s = String::from(label);
    for (_, c) in layout.columns() {
        s.push(',');
        s.push_str(c);
    }
    for c in histogram_columns() {
        s.push(',');
        s.push_str(&c);
    }
    s.push('\n');
    for (key, r) in rows {
        s.push_str(key);
        let vals = scalars(r);
        for (i, _) in layout.columns() {
            s.push(',');
            s.push_str(&cell(vals[i]));
        }
        for i in 0..HISTOGRAM_BINS {
            s.push(',');
            s.push_str(&cell(r.weight_histogram.map(|h| h[i])));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation of each present column.
pub fn aggregate(reports: &[MetricsReport], layout: Layout) -> Vec<Summary> {
    layout
        .columns()
        .filter_map(|(i, c)| {
            let xs: Vec<f64> = reports.iter().filter_map(|r| scalars(r)[i]).collect();
            if xs.is_empty() {
                return None;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            Some(Summary {
                column: c.to_string(),
                mean,
                std: var.sqrt(),
                count: xs.len(),
            })
        })
        .collect()
}

pub fn summary_csv(summary: &[Summary]) -> String {
    let mut s = String::from("metric,mean,std,count\n");
    for x in summary {
        let _ = writeln!(s, "{},{},{},{}", x.column, x.mean, x.std, x.count);
    }
    s
}

/// JSON sidecar: the report with its full curves and histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub label: String,
    pub report: MetricsReport,
    pub detail: MetricsDetail,
}
