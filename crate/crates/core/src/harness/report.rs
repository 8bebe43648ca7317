//! Report files: `report.json`, `report.csv` and `timing.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiment::MetricsReport;
use crate::error::Result;
use crate::subsampler::Criterion;

#[derive(Debug, Serialize)]
struct TimingRow {
    criterion: Criterion,
    r: f64,
    mean_seconds: f64,
    replications: usize,
}

/// Writes the three report files into `dir`, creating it if needed, and
/// returns their paths.
///
/// `report.json` holds everything except wall-clock times and is identical
/// across runs with the same configuration. `report.csv` is long format,
/// one row per criterion, r, metric and coordinate, and includes times.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;

    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;

    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["criterion", "r", "metric", "coordinate", "value"])?;
    for c in &report.cells {
        let mut row = |metric: &str, coord: Option<usize>, value: f64| {
            w.write_record([
                c.criterion.as_str().to_string(),
                c.r.to_string(),
                metric.to_string(),
                coord.map_or(String::new(), |j| (j + 1).to_string()),
                value.to_string(),
            ])
        };
        for (name, v) in [
            ("rmse", c.rmse),
            ("rmse_f", c.rmse_f),
            ("mean_error_norm", c.mean_error_norm),
        ] {
            if let Some(v) = v {
                row(name, None, v)?;
            }
        }
        for (j, v) in c.ci_length.iter().enumerate() {
            row("ci_length", Some(j), *v)?;
        }
        for (j, v) in c.coverage.iter().flatten().enumerate() {
            row("coverage", Some(j), *v)?;
        }
        row("mean_realized_size", None, c.mean_realized_size)?;
        row("mean_seconds", None, c.mean_seconds)?;
        row("completed", None, c.completed as f64)?;
        row("with_intervals", None, c.with_intervals as f64)?;
        row("failed", None, c.failed as f64)?;
    }
    w.flush()?;

    let timing_path = dir.join("timing.json");
    let timing: Vec<TimingRow> = report
        .cells
        .iter()
        .map(|c| TimingRow {
            criterion: c.criterion,
            r: c.r,
            mean_seconds: c.mean_seconds,
            replications: c.completed + c.failed,
        })
        .collect();
    let mut f = std::fs::File::create(&timing_path)?;
    serde_json::to_writer_pretty(&mut f, &timing)?;
    f.write_all(b"\n")?;

    Ok(vec![json_path, csv_path, timing_path])
}
