//! Report files: one CSV per metric, a JSON aggregate, and plot-data tables.
//!
//! Every CSV value is written with Rust's shortest round-trip float formatting, so
//! parsing a file recovers the in-memory value exactly. Missing values (failed cells,
//! undefined ratios) are written as empty fields.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tacs_core::{Error, Result, SelectorKind};

use crate::diagnostics::mean_std;
use crate::pipeline::{CellReport, RunReport};

/// Metrics written as `metric_<name>.csv`.
pub const METRICS: [&str; 7] = [
    "test_error",
    "target_fraction",
    "clean_fraction",
    "target_precision",
    "shape_ratio",
    "d_val_retrain",
    "d_pool_retrain",
];

pub const METRIC_HEADER: &str = "selector,budget,seed,value";
pub const PROJECTION_HEADER: &str = "selector,budget,seed,path,e1,e2";
pub const SHAPE_HEADER: &str = "selector,budget,seed,d_val_retrain,d_pool_retrain,ratio";
pub const RATIO_ERROR_HEADER: &str = "selector,budget,seed,ratio,test_error";
pub const BUDGET_CURVE_HEADER: &str =
    "selector,budget,n,error_mean,error_std,accuracy_mean,accuracy_std,precision_mean,precision_std";
pub const TIMING_HEADER: &str = "selector,budget,seed,seconds";

pub fn metric_value(cell: &CellReport, metric: &str) -> Option<f64> {
    let q = cell.quality.as_ref();
    let s = cell.shape.as_ref();
    match metric {
        "test_error" => cell.test_error,
        "target_fraction" => q.map(|q| q.target_fraction),
        "clean_fraction" => q.map(|q| q.clean_fraction),
        "target_precision" => q.map(|q| q.target_precision),
        "shape_ratio" => s.and_then(|s| s.ratio),
        "d_val_retrain" => s.map(|s| s.d_val_retrain),
        "d_pool_retrain" => s.map(|s| s.d_pool_retrain),
        _ => None,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub selector: SelectorKind,
    pub budget: usize,
    pub metric: String,
    /// Number of seeds with a value.
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
}

/// Mean ± std over seeds for every (selector, budget, metric) with at least one value.
pub fn aggregate(report: &RunReport) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(SelectorKind, usize, usize), Vec<f64>> = BTreeMap::new();
    for cell in &report.cells {
        for (m, name) in METRICS.iter().enumerate() {
            if let Some(v) = metric_value(cell, name) {
                groups
                    .entry((cell.selector, cell.budget, m))
                    .or_default()
                    .push(v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((selector, budget, m), values)| {
            let (mean, std) = mean_std(&values);
            AggregateRow {
                selector,
                budget,
                metric: METRICS[m].to_string(),
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn aggregate_of(
    rows: &[AggregateRow],
    selector: SelectorKind,
    budget: usize,
    metric: &str,
) -> Option<(f64, f64)> {
    rows.iter()
        .find(|r| r.selector == selector && r.budget == budget && r.metric == metric)
        .map(|r| (r.mean, r.std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub regime: String,
    pub config_digest: String,
    pub retrain_rule: String,
    pub aggregates: Vec<AggregateRow>,
    pub failed_cells: usize,
}

pub fn metric_csv(report: &RunReport, metric: &str) -> String {
    let mut out = format!("{METRIC_HEADER}\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.selector,
            c.budget,
            c.seed,
            opt(metric_value(c, metric))
        );
    }
    out
}

/// One parsed metric row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub selector: SelectorKind,
    pub budget: usize,
    pub seed: u64,
    pub value: Option<f64>,
}

pub fn parse_metric_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRIC_HEADER => {}
        other => {
            return Err(Error::Format {
                what: "metric csv",
                detail: format!("unexpected header {other:?}"),
            })
        }
    }
    let bad = |line: &str| Error::Format {
        what: "metric csv",
        detail: format!("malformed row {line:?}"),
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(MetricRow {
                selector: f[0].parse()?,
                budget: f[1].parse().map_err(|_| bad(line))?,
                seed: f[2].parse().map_err(|_| bad(line))?,
                value: if f[3].is_empty() {
                    None
                } else {
                    Some(f[3].parse().map_err(|_| bad(line))?)
                },
            })
        })
        .collect()
}

fn projections_csv(report: &RunReport) -> String {
    let mut out = format!("{PROJECTION_HEADER}\n");
    for c in &report.cells {
        if let Some(p) = &c.projection {
            for (name, (a, b)) in [("retrain", p.retrain), ("val", p.val), ("pool", p.pool)] {
                let _ = writeln!(out, "{},{},{},{name},{a},{b}", c.selector, c.budget, c.seed);
            }
        }
    }
    out
}

fn shape_csv(report: &RunReport) -> String {
    let mut out = format!("{SHAPE_HEADER}\n");
    for c in &report.cells {
        if let Some(s) = &c.shape {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.selector,
                c.budget,
                c.seed,
                s.d_val_retrain,
                s.d_pool_retrain,
                opt(s.ratio)
            );
        }
    }
    out
}

fn ratio_error_csv(report: &RunReport) -> String {
    let mut out = format!("{RATIO_ERROR_HEADER}\n");
    for c in &report.cells {
        if let (Some(s), Some(e)) = (&c.shape, c.test_error) {
            let _ = writeln!(
                out,
                "{},{},{},{},{e}",
                c.selector,
                c.budget,
                c.seed,
                opt(s.ratio)
            );
        }
    }
    out
}

fn budget_curve_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{BUDGET_CURVE_HEADER}\n");
    for r in rows.iter().filter(|r| r.metric == "test_error") {
        let prec = aggregate_of(rows, r.selector, r.budget, "target_precision");
        let (pm, ps) = prec.map_or((String::new(), String::new()), |(m, s)| {
            (m.to_string(), s.to_string())
        });
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{pm},{ps}",
            r.selector,
            r.budget,
            r.n,
            r.mean,
            r.std,
            1.0 - r.mean,
            r.std
        );
    }
    out
}

fn timing_csv(report: &RunReport) -> String {
    let mut out = format!("{TIMING_HEADER}\n");
    for t in &report.timing {
        let _ = writeln!(out, "{},{},{},{}", t.selector, t.budget, t.seed, t.seconds);
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes every report file into `dir` (created if missing) and returns their paths.
/// `timing.csv` is the only file whose content varies between identical runs.
pub fn emit_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = aggregate(report);
    let summary = Summary {
        regime: report.regime.to_string(),
        config_digest: report.config_digest.clone(),
        retrain_rule: report.retrain_rule.clone(),
        failed_cells: report.cells.iter().filter(|c| c.error.is_some()).count(),
        aggregates: rows.clone(),
    };
    let mut paths = Vec::new();
    for m in METRICS {
        paths.push(write(
            dir,
            &format!("metric_{m}.csv"),
            &metric_csv(report, m),
        )?);
    }
    paths.push(write(dir, "summary.json", &to_json(&summary))?);
    paths.push(write(dir, "report.json", &to_json(report))?);
    paths.push(write(
        dir,
        "endpoint_projections.csv",
        &projections_csv(report),
    )?);
    paths.push(write(dir, "shape_ratio.csv", &shape_csv(report))?);
    paths.push(write(dir, "ratio_vs_error.csv", &ratio_error_csv(report))?);
    paths.push(write(dir, "budget_curve.csv", &budget_curve_csv(&rows))?);
    paths.push(write(dir, "timing.csv", &timing_csv(report))?);
    Ok(paths)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "run report",
        detail: e.to_string(),
    })
}
