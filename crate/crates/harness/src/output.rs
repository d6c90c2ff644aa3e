//! Result files and the `report` table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use vfp_core::metrics::MetricSeries;
use walkdir::WalkDir;

use crate::error::HarnessError;
use crate::experiment::{ExperimentResult, Summary};

/// Writes `summary.json` and, if enabled, per-repetition series and rank
/// histograms into `dir`. CSV files start with a `# config:` comment line.
pub fn write_result(dir: &Path, result: &ExperimentResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let summary = &result.summary;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    let header = format!("# config: {}\n", serde_json::to_string(&summary.config)?);
    if summary.config.output.series {
        for (r, s) in result.series.iter().enumerate() {
            fs::write(dir.join(format!("series_rep{r}.csv")), header.clone() + &series_csv(s))?;
        }
    }
    if summary.config.output.ranks {
        for (r, s) in result.series.iter().enumerate() {
            fs::write(dir.join(format!("ranks_rep{r}.csv")), header.clone() + &ranks_csv(&s.rank_counts))?;
        }
        fs::write(dir.join("ranks_total.csv"), header + &ranks_csv(&summary.rank_counts))?;
    }
    Ok(())
}

pub fn series_csv(series: &MetricSeries) -> String {
    let mut out = String::from("cycle,rmse_instant,flow_steps,converged\n");
    for (k, ((r, s), c)) in series.rmse_instant.iter().zip(&series.flow_steps).zip(&series.converged).enumerate() {
        let _ = writeln!(out, "{},{r},{s},{c}", k + 1);
    }
    out
}

pub fn ranks_csv(counts: &[u64]) -> String {
    let mut out = String::from("bin,count\n");
    for (b, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{b},{c}");
    }
    out
}

/// All `summary.json` files at or below `dir`, sorted by path.
pub fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut found = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| HarnessError::Io(e.into()))?;
        if entry.file_type().is_file() && entry.file_name() == "summary.json" {
            found.push(entry.into_path());
        }
    }
    found.sort();
    Ok(found)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |f| format!("{f:.4}")),
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// One table row per summary under `dir`.
pub fn report(dir: &Path) -> Result<String, HarnessError> {
    let mut out = format!(
        "{:<40} {:<16} {:>8} {:>10} {:>10} {:>10} {:>8}\n",
        "run", "method", "status", "rmse", "steps", "converged", "chi2"
    );
    for path in find_summaries(dir)? {
        let v: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let run =
            path.parent().and_then(|p| p.strip_prefix(dir).ok()).map_or_else(String::new, |p| p.display().to_string());
        let run = if run.is_empty() { cell(&v["name"]) } else { run };
        let _ = writeln!(
            out,
            "{:<40} {:<16} {:>8} {:>10} {:>10} {:>10} {:>8}",
            run,
            cell(&v["method"]),
            cell(&v["status"]),
            cell(&v["mean_rmse"]),
            cell(&v["mean_flow_steps"]),
            cell(&v["converged_fraction"]),
            cell(&v["rank_chi_square"]),
        );
    }
    Ok(out)
}

/// One-line description of a finished experiment.
pub fn summary_line(summary: &Summary) -> String {
    let rmse = summary.mean_rmse.map_or_else(|| "-".into(), |r| format!("{r:.4}"));
    format!("{} {}: rmse {rmse} ({:?})", summary.name, summary.method, summary.status)
}
