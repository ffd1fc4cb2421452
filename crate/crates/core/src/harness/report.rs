//! Aggregates `summary.json` files into one table.

use std::fs;
use std::path::{Path, PathBuf};

use super::runner::RunSummary;
use crate::error::{Error, Result};
use crate::metrics::{delta_m, BaselineTable};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Directory of the summary, relative to the scanned root.
    pub run: String,
    pub combiner: String,
    pub delta_m: f64,
    pub delta_m_std: f64,
    pub tasks: Vec<(String, f64)>,
}

fn find_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// One row per `summary.json` under `dir`, best delta-m first. With a
/// baseline, delta-m is recomputed from each summary's per-task means.
pub fn collect(dir: &Path, baseline: Option<&BaselineTable>) -> Result<Vec<ReportRow>> {
    if !dir.is_dir() {
        return Err(Error::config(format!("{} is not a directory", dir.display())));
    }
    let mut paths = Vec::new();
    find_summaries(dir, &mut paths)?;
    let mut rows = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let summary = RunSummary::from_json(&text, &path)?;
        let (dm, std) = match baseline {
            Some(b) => {
                let means: Vec<f64> = summary.per_task.iter().map(|t| t.mean).collect();
                let d = delta_m(&means, b).map_err(|e| Error::malformed(&path, e))?;
                (d.mean, f64::NAN)
            }
            None => (summary.delta_m.mean, summary.delta_m.std),
        };
        let run = path
            .parent()
            .and_then(|p| p.strip_prefix(dir).ok())
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".to_string());
        rows.push(ReportRow {
            run,
            combiner: summary.combiner,
            delta_m: dm,
            delta_m_std: std,
            tasks: summary.per_task.into_iter().map(|t| (format!("{}_{}", t.task, t.metric), t.mean)).collect(),
        });
    }
    rows.sort_by(|a, b| b.delta_m.total_cmp(&a.delta_m));
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn table(rows: &[ReportRow]) -> Vec<Vec<String>> {
    let task_cols: Vec<String> = rows.first().map(|r| r.tasks.iter().map(|t| t.0.clone()).collect()).unwrap_or_default();
    let mut header = vec!["run".to_string(), "combiner".into(), "delta_m".into(), "delta_m_std".into()];
    header.extend(task_cols);
    let mut out = vec![header];
    for r in rows {
        let mut line = vec![
            r.run.clone(),
            r.combiner.clone(),
            format!("{:.2}", crate::metrics::round_percent(r.delta_m)),
            fmt_num(r.delta_m_std),
        ];
        line.extend(r.tasks.iter().map(|t| fmt_num(t.1)));
        out.push(line);
    }
    out
}

/// Column-aligned text table.
pub fn render(rows: &[ReportRow]) -> String {
    let cells = table(rows);
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in &cells {
        let line: Vec<String> = row.iter().enumerate().map(|(c, v)| format!("{v:<w$}", w = widths[c])).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// CSV form of the table, with full-precision numbers.
pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    let task_cols: Vec<String> = rows.first().map(|r| r.tasks.iter().map(|t| t.0.clone()).collect()).unwrap_or_default();
    let mut header = vec!["run".to_string(), "combiner".into(), "delta_m".into(), "delta_m_std".into()];
    header.extend(task_cols);
    let io = |e: csv::Error| Error::malformed(path, e);
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.run.clone(), r.combiner.clone(), r.delta_m.to_string(), r.delta_m_std.to_string()];
        rec.extend(r.tasks.iter().map(|t| t.1.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
