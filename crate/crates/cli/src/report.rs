//! Metric tables for grids and single runs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use mbcgcn::MetricsReport;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => bail!("unknown report format {other:?} (expected csv or json)"),
        }
    }
}

/// Values are printed with four decimal places.
pub fn format_value(v: f64) -> String {
    format!("{v:.4}")
}

/// One `(label, metric, K, value)` row per metric and cutoff, recall first.
pub fn rows(reports: &[MetricsReport]) -> Vec<(String, &'static str, usize, f64)> {
    let mut out = Vec::new();
    for r in reports {
        for (metric, values) in [("recall", &r.recall), ("ndcg", &r.ndcg)] {
            for (&k, &v) in r.ks.iter().zip(values) {
                out.push((r.label.clone(), metric, k, v));
            }
        }
    }
    out
}

/// Writes the table to `path`. Nothing is created for an empty list.
pub fn write_report(reports: &[MetricsReport], format: ReportFormat, path: &Path) -> Result<()> {
    ensure!(!reports.is_empty(), "no reports to write");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        ReportFormat::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            csv.write_record(["label", "metric", "K", "value"])?;
            for (label, metric, k, v) in rows(reports) {
                csv.write_record([label, metric.to_owned(), k.to_string(), format_value(v)])?;
            }
            csv.flush()?;
        }
        ReportFormat::Json => {
            let table: Vec<Value> = rows(reports)
                .into_iter()
                .map(|(label, metric, k, v)| {
                    // Round through the decimal text so JSON shows the same digits.
                    let value: f64 = format_value(v).parse().expect("formatted float parses");
                    json!({"label": label, "metric": metric, "K": k, "value": value})
                })
                .collect();
            serde_json::to_writer_pretty(&mut w, &table)?;
            writeln!(w)?;
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    MetricsReport::from_json(&value).with_context(|| format!("in {}", path.display()))
}

pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&report.to_json())?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
