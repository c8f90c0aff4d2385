//! Trace and summary files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wra::drivers::{TracePoint, TrialRecord};
use wra::evaluation::BatchSummary;

use crate::CliError;

pub const TRACE_HEADER: [&str; 5] = ["fcalls", "iteration", "gap", "best_approx_F", "restarts"];
pub const SUMMARY_HEADER: [&str; 10] = [
    "problem",
    "algorithm",
    "b",
    "dx",
    "dy",
    "n_success",
    "n_trials",
    "median_fcalls",
    "q25_fcalls",
    "q75_fcalls",
];

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for p in trace {
        w.write_record([
            p.fcalls.to_string(),
            p.iteration.to_string(),
            fmt_f64(p.gap),
            fmt_f64(p.best_approx_f),
            p.restarts.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// One line of the bench summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Sweep point the row belongs to; not part of the CSV schema.
    pub point: String,
    pub problem: String,
    pub algorithm: String,
    pub b: f64,
    pub dx: usize,
    pub dy: usize,
    pub n_success: usize,
    pub n_trials: usize,
    pub median_fcalls: Option<f64>,
    pub q25_fcalls: Option<f64>,
    pub q75_fcalls: Option<f64>,
}

impl SummaryRow {
    pub fn new(point: &str, s: &BatchSummary) -> Self {
        let stats = s.fcalls_to_success.as_ref();
        Self {
            point: point.to_string(),
            problem: s.problem.id.to_string(),
            algorithm: s.algorithm.to_string(),
            b: s.problem.b,
            dx: s.problem.dx,
            dy: s.problem.dy,
            n_success: s.n_success,
            n_trials: s.n_trials,
            median_fcalls: stats.map(|f| f.median),
            q25_fcalls: stats.map(|f| f.q25),
            q75_fcalls: stats.map(|f| f.q75),
        }
    }
}

/// Summary CSV; f-call columns are empty when no trial succeeded.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.problem.clone(),
            r.algorithm.clone(),
            fmt_f64(r.b),
            r.dx.to_string(),
            r.dy.to_string(),
            r.n_success.to_string(),
            r.n_trials.to_string(),
            fmt_opt(r.median_fcalls),
            fmt_opt(r.q25_fcalls),
            fmt_opt(r.q75_fcalls),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Per-trial outcome kept in summary JSON files next to the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub fcalls: u64,
    pub fcalls_to_success: Option<u64>,
    pub final_gap: f64,
    pub best_gap: f64,
    pub stop_reason: wra::drivers::StopReason,
}

impl TrialOutcome {
    pub fn new(trial: usize, r: &TrialRecord) -> Self {
        Self {
            trial,
            seed: r.seed,
            success: r.success,
            fcalls: r.fcalls,
            fcalls_to_success: r.fcalls_to_success,
            final_gap: r.final_gap,
            best_gap: r.best_gap,
            stop_reason: r.stop_reason,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}
