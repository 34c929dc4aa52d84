//! Report files: one JSON per feature kind, a summary CSV and the layer sweep CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dysbench_core::eval::{EvalReport, Protocol};
use serde::{Deserialize, Serialize};

use crate::config::ConfigEcho;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "layer_sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: ConfigEcho,
    pub report: EvalReport,
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.4}", x * scale))
}

pub fn summary_csv(protocol: Protocol, reports: &[ReportFile]) -> String {
    let mut out = String::new();
    match protocol {
        Protocol::Detect => {
            out.push_str("feature_kind,protocol,ACC,SE,SP,F1\n");
            for r in reports {
                let m = r
                    .report
                    .binary
                    .unwrap_or_else(|| dysbench_core::eval::binary_metrics(&r.report.pooled));
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.report.feature_kind,
                    protocol,
                    fmt_opt(m.acc, 100.0),
                    fmt_opt(m.se, 1.0),
                    fmt_opt(m.sp, 1.0),
                    fmt_opt(m.f1, 1.0)
                );
            }
        }
        Protocol::Severity => {
            out.push_str("feature_kind,protocol,ACC,acc_very_low,acc_low,acc_medium,acc_high\n");
            for r in reports {
                let cw = r.report.classwise_mean.clone().unwrap_or_default();
                let cells: Vec<String> = (0..4)
                    .map(|c| fmt_opt(cw.get(c).copied().flatten(), 1.0))
                    .collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    r.report.feature_kind,
                    protocol,
                    fmt_opt(r.report.mean_fold_accuracy, 100.0),
                    cells.join(",")
                );
            }
        }
    }
    out
}

/// Accuracy (%) per feature kind; `layer` is empty for the baselines.
pub fn sweep_csv(reports: &[ReportFile]) -> String {
    let mut out = String::from("feature_kind,layer,mean_acc,pooled_acc\n");
    for r in reports {
        let layer = r
            .report
            .feature_kind
            .layer()
            .map(|l| l.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.report.feature_kind,
            layer,
            fmt_opt(r.report.mean_fold_accuracy, 100.0),
            fmt_opt(r.report.pooled_accuracy, 100.0)
        );
    }
    out
}

/// Human-readable summary with the same columns as the summary CSV.
pub fn summary_table(protocol: Protocol, reports: &[ReportFile]) -> String {
    let csv = summary_csv(protocol, reports);
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(1);
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            );
        }
    }
    out
}

pub fn report_file_name(r: &ReportFile) -> String {
    format!("{}.json", r.report.feature_kind)
}

pub fn write_all(dir: &Path, protocol: Protocol, reports: &[ReportFile]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in reports {
        let mut json = serde_json::to_string_pretty(r)?;
        json.push('\n');
        let path = dir.join(report_file_name(r));
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    write_summaries(dir, protocol, reports)
}

pub fn write_summaries(dir: &Path, protocol: Protocol, reports: &[ReportFile]) -> Result<()> {
    for (name, body) in [
        (SUMMARY_FILE, summary_csv(protocol, reports)),
        (SWEEP_FILE, sweep_csv(reports)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Loads every report JSON in `dir`, ordered by feature kind.
pub fn load_all(dir: &Path) -> Result<Vec<ReportFile>> {
    let mut reports = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path)?;
            let r: ReportFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing report {}", path.display()))?;
            reports.push(r);
        }
    }
    reports.sort_by_key(|r| r.report.feature_kind);
    Ok(reports)
}
