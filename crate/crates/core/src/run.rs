//! Running scenarios: single runs with trace and report files, and
//! parallel batches over configs and seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{MetricsError, MetricsReport};
use crate::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use crate::sim::Simulation;
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A finished run held in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    /// Rendered trace text, exactly as written to disk.
    pub text: String,
    pub report: MetricsReport,
}

impl RunOutput {
    /// Hex SHA-256 of the rendered trace.
    pub fn digest(&self) -> String {
        trace_digest(&self.text)
    }
}

pub fn trace_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Simulates `cfg` to its duration and derives the metrics from the trace.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run();
    let trace = sim.finish();
    let text = trace.render();
    let report = MetricsReport::from_trace(&trace)?;
    Ok(RunOutput { trace, text, report })
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|source| RunError::Io { path: path.display().to_string(), source })
}

/// Runs `cfg`, writes the trace to `trace_path` and, if given, the
/// rendered report to `report_path`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    trace_path: &Path,
    report_path: Option<&Path>,
) -> Result<(PathBuf, MetricsReport), RunError> {
    let out = execute(cfg)?;
    write(trace_path, &out.text)?;
    if let Some(p) = report_path {
        write(p, &out.report.render())?;
    }
    Ok((trace_path.to_path_buf(), out.report))
}

/// Recomputes a report from a trace file on disk.
pub fn replay_metrics(trace_path: &Path) -> Result<MetricsReport, ReplayError> {
    let trace = Trace::read_from(trace_path)?;
    Ok(MetricsReport::from_trace(&trace)?)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceParseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Result of one (config, seed) pair in a batch.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub config: String,
    pub seed: u64,
    pub outcome: Result<BatchResult, String>,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub digest: String,
    pub events: usize,
    pub report: MetricsReport,
}

/// Runs every (config, seed) pair in parallel. Rows come back in config
/// order, then seed order; a failing pair only spoils its own row.
/// With `out_dir`, each run writes `<stem>-s<seed>.trace` and `.report`.
pub fn batch(configs: &[PathBuf], seeds: &[u64], out_dir: Option<&Path>) -> Vec<BatchRow> {
    let loaded: Vec<Result<ScenarioConfig, String>> =
        configs.iter().map(|p| load_scenario(p).map_err(|e| e.to_string())).collect();
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    jobs.par_iter()
        .map(|&(c, seed)| {
            let path = &configs[c];
            let outcome = loaded[c].clone().and_then(|cfg| {
                let out = execute(&cfg.with_seed(seed)).map_err(|e| e.to_string())?;
                if let Some(dir) = out_dir {
                    let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                    write(&dir.join(format!("{stem}-s{seed}.trace")), &out.text).map_err(|e| e.to_string())?;
                    write(&dir.join(format!("{stem}-s{seed}.report")), &out.report.render()).map_err(|e| e.to_string())?;
                }
                Ok(BatchResult { digest: out.digest(), events: out.trace.len(), report: out.report })
            });
            BatchRow { config: path.display().to_string(), seed, outcome }
        })
        .collect()
}

/// Per-config means of the summary metrics over the rows that succeeded.
/// A metric undefined in every run stays `None`.
pub fn config_means(rows: &[BatchRow]) -> Vec<(String, usize, Vec<Option<f64>>)> {
    let mut out: Vec<(String, usize, Vec<Option<f64>>)> = Vec::new();
    let mut sums: Vec<Vec<(f64, usize)>> = Vec::new();
    for r in rows {
        let at = match out.iter().position(|(c, _, _)| *c == r.config) {
            Some(i) => i,
            None => {
                out.push((r.config.clone(), 0, Vec::new()));
                sums.push(vec![(0.0, 0); crate::metrics::SUMMARY_METRICS.len()]);
                out.len() - 1
            }
        };
        let Ok(b) = &r.outcome else { continue };
        out[at].1 += 1;
        for (slot, (_, v)) in sums[at].iter_mut().zip(b.report.summary()) {
            if let Some(x) = v {
                slot.0 += x;
                slot.1 += 1;
            }
        }
    }
    for (row, s) in out.iter_mut().zip(sums) {
        row.2 = s.into_iter().map(|(sum, n)| (n > 0).then(|| sum / n as f64)).collect();
    }
    out
}

/// Tab-separated summary table, one row per batch entry, followed by
/// `# mean` lines with per-config averages.
pub fn render_batch(rows: &[BatchRow]) -> String {
    let mut out = String::from("# adsim batch summary\n");
    let mut cols = vec!["config", "seed", "status", "events", "digest"];
    let metric_names: Vec<&str> = crate::metrics::SUMMARY_METRICS.to_vec();
    cols.extend(&metric_names);
    cols.push("error");
    out.push_str(&cols.join("\t"));
    out.push('\n');
    for r in rows {
        let mut cells = vec![r.config.clone(), r.seed.to_string()];
        match &r.outcome {
            Ok(b) => {
                cells.extend(["ok".to_string(), b.events.to_string(), b.digest[..16].to_string()]);
                cells.extend(b.report.summary().into_iter().map(|(_, v)| v.map_or("-".into(), |x| format!("{x:.6}"))));
                cells.push("-".into());
            }
            Err(e) => {
                cells.extend(["error".to_string(), "-".into(), "-".into()]);
                cells.extend(metric_names.iter().map(|_| "-".to_string()));
                cells.push(e.replace(['\t', '\n'], " "));
            }
        }
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    for (config, runs, means) in config_means(rows) {
        let cells: Vec<String> = means.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.6}"))).collect();
        let _ = writeln!(out, "# mean\t{config}\t{runs}\t{}", cells.join("\t"));
    }
    out
}
