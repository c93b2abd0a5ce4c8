//! `report`: joins several eval directories into one markdown table and
//! exports a few predicted clouds for offline viewing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::eval::{read_aggregate, Aggregate, AGGREGATE_NAME, METHOD_MODEL, PRED_DIR};
use crate::error::{Error, Result};
use crate::geometry::io;
use crate::util::write_atomic;

pub const REPORT_NAME: &str = "report.md";
pub const EXPORT_DIR: &str = "clouds";
/// Predicted clouds exported per run.
pub const EXPORTS_PER_RUN: usize = 4;

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub table: PathBuf,
    pub exported: Vec<PathBuf>,
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Markdown table with one row per (metric, run) for `method`.
pub fn render_table(runs: &[(String, Aggregate)], method: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| metric | run | mean | median |");
    let _ = writeln!(s, "|---|---|---|---|");
    let Some((_, first)) = runs.first() else { return s };
    let Some(metrics) = first.methods.get(method) else { return s };
    for metric in metrics.keys() {
        for (label, agg) in runs {
            if let Some(st) = agg.methods.get(method).and_then(|m| m.get(metric)) {
                let _ = writeln!(s, "| {metric} | {label} | {:.6} | {:.6} |", st.mean, st.median);
            }
        }
    }
    s
}

pub fn run_report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut runs = Vec::new();
    for d in run_dirs {
        if !d.is_dir() {
            return Err(Error::Config(format!("missing run directory {}", d.display())));
        }
        let agg_path = d.join(AGGREGATE_NAME);
        if !agg_path.is_file() {
            return Err(Error::Config(format!("run directory {} has no {AGGREGATE_NAME}", d.display())));
        }
        runs.push((run_label(d), read_aggregate(&agg_path)?));
    }

    let mut md = String::from("# Evaluation report\n\n");
    for (label, agg) in &runs {
        let _ = writeln!(
            md,
            "- `{label}`: stage {}, align {}, {} samples, {} points, step {}, {:.3} s per inference",
            agg.stage, agg.align.as_str(), agg.samples, agg.points, agg.fm_step, agg.inference_seconds.mean
        );
    }
    let _ = writeln!(md, "\n## Model\n\n{}", render_table(&runs, METHOD_MODEL));
    let mut baselines: Vec<&String> = runs.iter().flat_map(|(_, a)| a.methods.keys()).filter(|m| *m != METHOD_MODEL).collect();
    baselines.sort();
    baselines.dedup();
    for b in baselines {
        let _ = writeln!(md, "## {b}\n\n{}", render_table(&runs, b));
    }
    let table = out.join(REPORT_NAME);
    write_atomic(&table, md.as_bytes())?;

    let mut exported = Vec::new();
    for ((label, _), d) in runs.iter().zip(run_dirs) {
        let pred_dir = d.join(PRED_DIR);
        let Ok(entries) = std::fs::read_dir(&pred_dir) else { continue };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "npc"))
            .collect();
        files.sort();
        for f in files.into_iter().take(EXPORTS_PER_RUN) {
            let cloud = io::read_npc(&f)?;
            let name = format!("{label}_{}", f.file_name().expect("file").to_string_lossy());
            let dst = out.join(EXPORT_DIR).join(name);
            io::write_npc(&dst, &cloud)?;
            exported.push(dst);
        }
    }
    Ok(ReportSummary { table, exported })
}
