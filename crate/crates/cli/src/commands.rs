//! The four subcommands. Each returns the text to print on stdout.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wra::drivers::Algorithm;
use wra::evaluation::{aggregate, certify_worst_case, BatchSummary, Protocol};
use wra::numerics::Rng;
use wra::problems::{MatrixKind, Problem, ProblemId, ProblemSpec};

use crate::config::{ExperimentConfig, Format};
use crate::output::{self, fmt_f64, SummaryRow, TrialOutcome};
use crate::runner::run_batch;
use crate::CliError;

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub jobs: usize,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(f) = self.format {
            cfg.output.format = f;
        }
    }
}

#[derive(Serialize)]
struct Batch<'a> {
    point: &'a str,
    summary: BatchSummary,
    trials: Vec<TrialOutcome>,
}

/// Runs every algorithm's trials for one point, writing traces under `dir`.
fn run_point(
    cfg: &ExperimentConfig,
    problem: &Problem,
    point: &crate::config::Point,
    algorithm: Algorithm,
    dir: &Path,
    jobs: usize,
) -> Result<BatchSummary, CliError> {
    let records = run_batch(
        problem,
        algorithm,
        &point.params,
        cfg.budget,
        cfg.n_trials,
        cfg.master_seed,
        jobs,
    )?;
    for (i, r) in records.iter().enumerate() {
        match cfg.output.format {
            Format::Csv => output::write(&dir.join(format!("trial_{i:03}.csv")), &output::trace_csv(&r.trace))?,
            Format::Json => output::write(&dir.join(format!("trial_{i:03}.json")), &output::to_json(r))?,
        }
    }
    let summary = aggregate(&records);
    let batch = Batch {
        point: &point.key,
        summary: summary.clone(),
        trials: records.iter().enumerate().map(|(i, r)| TrialOutcome::new(i, r)).collect(),
    };
    output::write(&dir.join("summary.json"), &output::to_json(&batch))?;
    Ok(summary)
}

/// `run`: the base point only; sweeps belong to `bench`.
pub fn run(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<String, CliError> {
    ov.apply(&mut cfg);
    if !cfg.sweep.is_empty() {
        return Err(CliError::Invalid("config has sweep axes; use `bench` for sweeps".into()));
    }
    let point = cfg.points().remove(0);
    let problem = point.problem.build()?;
    let mut report = String::new();
    for &alg in &cfg.algorithms {
        let dir = cfg.output.dir.join(alg.as_str());
        let s = run_point(&cfg, &problem, &point, alg, &dir, ov.jobs)?;
        report.push_str(&format!(
            "{} {} {}/{} successes -> {}\n",
            problem.id(),
            alg,
            s.n_success,
            s.n_trials,
            dir.display()
        ));
    }
    Ok(report)
}

/// `bench`: every sweep point x algorithm. A batch whose `row.json` exists
/// is taken as done and not re-run.
pub fn bench(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<String, CliError> {
    ov.apply(&mut cfg);
    let root = cfg.output.dir.clone();
    let mut rows = Vec::new();
    let mut report = String::new();
    for point in cfg.points() {
        let problem = point.problem.build()?;
        for &alg in &cfg.algorithms {
            let dir = root.join(&point.key).join(alg.as_str());
            let marker = dir.join("row.json");
            let (row, status) = match std::fs::read_to_string(&marker) {
                Ok(text) => {
                    let row: SummaryRow = serde_json::from_str(&text).map_err(|e| {
                        CliError::Invalid(format!("{}: {e}", marker.display()))
                    })?;
                    (row, "cached")
                }
                Err(_) => {
                    let s = run_point(&cfg, &problem, &point, alg, &dir, ov.jobs)?;
                    let row = SummaryRow::new(&point.key, &s);
                    output::write(&marker, &output::to_json(&row))?;
                    (row, "done")
                }
            };
            report.push_str(&format!(
                "{} {} {}/{} {status}\n",
                point.key, alg, row.n_success, row.n_trials
            ));
            rows.push(row);
        }
    }
    let path = match cfg.output.format {
        Format::Csv => {
            let p = root.join("summary.csv");
            output::write(&p, &output::summary_csv(&rows))?;
            p
        }
        Format::Json => {
            let p = root.join("summary.json");
            output::write(&p, &output::to_json(&rows))?;
            p
        }
    };
    report.push_str(&format!("summary -> {}\n", path.display()));
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub solution: PathBuf,
    pub problem: ProblemSpec,
    pub n_starts: usize,
    /// `None` means `200 * dy`.
    pub budget_per_start: Option<u64>,
    pub seed: u64,
    pub format: Option<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub problem: ProblemSpec,
    pub closed_form: f64,
    pub multistart: f64,
    pub n_starts: usize,
    pub budget_per_start: u64,
    pub abs_diff: f64,
    pub optimum: Option<f64>,
    pub gap: Option<f64>,
}

/// Reads whitespace- or comma-separated numbers, optionally in brackets.
pub fn parse_solution(text: &str) -> Result<Vec<f64>, CliError> {
    let body = text.trim().trim_start_matches('[').trim_end_matches(']');
    let x = body
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Invalid(format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if x.is_empty() {
        return Err(CliError::Invalid("solution file holds no numbers".into()));
    }
    Ok(x)
}

pub fn eval(args: &EvalArgs) -> Result<String, CliError> {
    let text = std::fs::read_to_string(&args.solution)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", args.solution.display())))?;
    let x = parse_solution(&text)?;
    let problem = args.problem.build()?;
    if x.len() != problem.dx() {
        return Err(CliError::Invalid(format!(
            "solution has {} entries, {} expects dx = {}",
            x.len(),
            problem.id(),
            problem.dx()
        )));
    }
    if args.n_starts == 0 {
        return Err(CliError::Invalid("--starts must be positive".into()));
    }
    let budget_per_start = args.budget_per_start.unwrap_or(200 * problem.dy() as u64);
    let mut rng = Rng::new(args.seed);
    let closed_form = certify_worst_case(&problem, &x, Protocol::ClosedForm, &mut rng)?;
    let multistart = certify_worst_case(
        &problem,
        &x,
        Protocol::Multistart {
            n_starts: args.n_starts,
            budget_per_start,
        },
        &mut rng,
    )?;
    let optimum = problem.optimum().ok().map(|(_, f)| f);
    let report = EvalReport {
        problem: args.problem.clone(),
        closed_form,
        multistart,
        n_starts: args.n_starts,
        budget_per_start,
        abs_diff: (closed_form - multistart).abs(),
        optimum,
        gap: optimum.map(|f| (closed_form - f).abs()),
    };
    Ok(match args.format {
        Some(Format::Json) => output::to_json(&report),
        Some(Format::Csv) => {
            let o = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            format!(
                "closed_form,multistart,abs_diff,optimum,gap\n{},{},{},{},{}\n",
                fmt_f64(report.closed_form),
                fmt_f64(report.multistart),
                fmt_f64(report.abs_diff),
                o(report.optimum),
                o(report.gap)
            )
        }
        None => {
            let mut s = format!(
                "problem     {} (dx={}, dy={}, b={})\nclosed_form {}\nmultistart  {} ({} starts x {} f-calls)\nabs_diff    {}\n",
                problem.id(),
                problem.dx(),
                problem.dy(),
                fmt_f64(args.problem.b),
                fmt_f64(report.closed_form),
                fmt_f64(report.multistart),
                report.n_starts,
                report.budget_per_start,
                fmt_f64(report.abs_diff)
            );
            if let (Some(f), Some(g)) = (report.optimum, report.gap) {
                s.push_str(&format!("optimum     {}\ngap         {}\n", fmt_f64(f), fmt_f64(g)));
            }
            s
        }
    })
}

pub const DEFAULT_DIM: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemInfo {
    pub id: String,
    pub category: &'static str,
    pub default_dim: usize,
    pub matrices: Vec<MatrixKind>,
    pub unbounded: bool,
    pub smooth: bool,
}

pub fn problem_table() -> Vec<ProblemInfo> {
    ProblemId::ALL
        .iter()
        .map(|&id| ProblemInfo {
            id: id.to_string(),
            category: id.category().tag(),
            default_dim: DEFAULT_DIM,
            matrices: if id.supports_band() {
                vec![MatrixKind::Diag, MatrixKind::Band]
            } else {
                vec![MatrixKind::Diag]
            },
            unbounded: id.supports_unbounded(),
            smooth: id.smooth(),
        })
        .collect()
}

pub fn list(format: Option<Format>) -> String {
    let table = problem_table();
    match format {
        Some(Format::Json) => output::to_json(&table),
        Some(Format::Csv) => {
            let mut s = String::from("id,category,default_dim,matrices,unbounded,smooth\n");
            for p in &table {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.id,
                    p.category,
                    p.default_dim,
                    matrix_names(&p.matrices).join(";"),
                    p.unbounded,
                    p.smooth
                ));
            }
            s
        }
        None => {
            let mut s = format!("{:<4} {:<8} {:<4} {:<10} {}\n", "id", "category", "dim", "matrices", "unbounded");
            for p in &table {
                s.push_str(&format!(
                    "{:<4} {:<8} {:<4} {:<10} {}\n",
                    p.id,
                    p.category,
                    p.default_dim,
                    matrix_names(&p.matrices).join(","),
                    if p.unbounded { "yes" } else { "no" }
                ));
            }
            s
        }
    }
}

fn matrix_names(kinds: &[MatrixKind]) -> Vec<&'static str> {
    kinds
        .iter()
        .map(|k| match k {
            MatrixKind::Diag => "diag",
            MatrixKind::Band => "band",
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solution_parsing_accepts_common_layouts() {
        assert_eq!(parse_solution("1 2\n3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_solution("[1.5, -2e-3]\n").unwrap(), vec![1.5, -2e-3]);
        assert!(parse_solution("  \n").is_err());
        assert!(parse_solution("1, x").is_err());
    }

    #[test]
    fn table_categories() {
        let t = problem_table();
        assert_eq!(t.len(), 11);
        let cat = |id: &str| t.iter().find(|p| p.id == id).unwrap().category;
        assert_eq!(cat("f1"), "W");
        assert_eq!(cat("f2"), "W");
        assert_eq!(cat("f4"), "N");
        assert_eq!(cat("f8"), "S");
        assert!(t.iter().filter(|p| p.unbounded).map(|p| p.id.as_str()).eq(["f5", "f7", "f11"]));
    }
}
