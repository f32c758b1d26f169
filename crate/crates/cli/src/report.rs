//! Flat CSV rows and re-summarizing existing run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::run::RunReport;

/// One row per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub mean_disagreement: f64,
    pub mean_kl: f64,
    pub budget_ratio: f64,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?)
}

pub fn read_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Run directories under `root`: `root` itself if it holds a report, plus
/// every descendant that does, in sorted order.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("report.json").is_file() {
            found.push(dir.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
            if entry.path().is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

/// `nde report`: one row per run directory found under `roots`.
pub fn summarize(roots: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for root in roots {
        for dir in find_run_dirs(root)? {
            rows.push(read_report(&dir)?.row());
        }
    }
    Ok(rows)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
