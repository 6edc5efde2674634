use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use aae_core::evaluation::{round6, EQUILIBRIUM_LOSS};

use super::{ensure_dir, write_file};
use crate::error::CliError;
use crate::plot::{line_plot, Series};

pub const TABLE_HEADER: &str = "run,method,Accuracy,Average Precision,Average Recall";

/// Per-epoch mean of the discriminator loss column of a `losses.csv`. Rows with
/// an empty L2 field (classifier-only runs) are skipped.
pub fn discriminator_history(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut per_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("{} line {}: malformed row", path.display(), n + 1));
        if fields.len() != 6 {
            return Err(bad());
        }
        if fields[3].is_empty() {
            continue;
        }
        let epoch: usize = fields[0].parse().map_err(|_| bad())?;
        let l2: f64 = fields[3].parse().map_err(|_| bad())?;
        let entry = per_epoch.entry(epoch).or_default();
        entry.0 += l2;
        entry.1 += 1;
    }
    Ok(per_epoch.values().map(|(s, n)| s / *n as f64).collect())
}

struct RunSummary {
    name: String,
    method: &'static str,
    metrics: [f64; 3],
    curves: Vec<(String, PathBuf)>,
}

fn read_json(path: &Path) -> Option<serde_json::Value> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn metric_triple(v: &serde_json::Value) -> Option<[f64; 3]> {
    Some([
        v.get("accuracy")?.as_f64()?,
        v.get("macro_precision")?.as_f64()?,
        v.get("macro_recall")?.as_f64()?,
    ])
}

/// `None` when the directory holds no completed run.
fn summarize(dir: &Path) -> Option<RunSummary> {
    let metrics = match read_json(&dir.join("cv_summary.json")) {
        Some(cv) => metric_triple(cv.get("mean")?)?,
        None => metric_triple(&read_json(&dir.join("metrics_validation.json"))?)?,
    };
    let run = read_json(&dir.join("run.json"))?;
    let method = match run.pointer("/config/train/mode").and_then(|m| m.as_str()) {
        Some("classifier-only") => "baseline",
        _ => "proposed",
    };
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut curves = Vec::new();
    if dir.join("losses.csv").exists() {
        curves.push((name.clone(), dir.join("losses.csv")));
    }
    for f in 0.. {
        let path = dir.join(format!("fold{f}/losses.csv"));
        if !path.exists() {
            break;
        }
        curves.push((format!("{name}/fold{f}"), path));
    }
    Some(RunSummary { name, method, metrics, curves })
}

/// Side-by-side metrics table, discriminator-loss series and plot.
pub fn run(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let summaries: Vec<RunSummary> = runs.iter().filter_map(|d| {
        let s = summarize(d);
        if s.is_none() {
            log::warn!("{}: no completed run, skipped", d.display());
        }
        s
    }).collect();
    if summaries.is_empty() {
        return Err(CliError::Data("no completed runs found".into()));
    }
    ensure_dir(out)?;

    let mut table = format!("{TABLE_HEADER}\n");
    for s in &summaries {
        let [a, p, r] = s.metrics;
        let _ = writeln!(table, "{},{},{},{},{}", s.name, s.method, round6(a), round6(p), round6(r));
    }
    write_file(&out.join("comparison.csv"), &table)?;

    let mut series = Vec::new();
    let mut csv = String::from("series,epoch,L2\n");
    for s in &summaries {
        for (label, path) in &s.curves {
            let history = discriminator_history(path)?;
            if history.is_empty() {
                continue;
            }
            for (i, v) in history.iter().enumerate() {
                let _ = writeln!(csv, "{label},{},{}", i + 1, round6(*v));
            }
            series.push(Series {
                label: label.clone(),
                points: history.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect(),
            });
        }
    }
    write_file(&out.join("disc_loss.csv"), &csv)?;
    let svg = line_plot(&series, EQUILIBRIUM_LOSS, "2 ln 2 = 1.3863", "discriminator loss");
    write_file(&out.join("disc_loss.svg"), &svg)?;
    log::info!("report for {} runs written to {}", summaries.len(), out.display());
    Ok(())
}
