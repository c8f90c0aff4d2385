//! Success judgment, worst-case certification and batch statistics.

use serde::Serialize;
use thiserror::Error;

use crate::drivers::{Algorithm, TrialRecord};
use crate::elitist::multistart_maximize;
use crate::numerics::Rng;
use crate::objective::MinMaxObjective;
use crate::problems::{Problem, ProblemError, ProblemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl From<ProblemError> for EvalError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::InvalidInput(m) => EvalError::InvalidInput(m),
            ProblemError::Unsupported(m) => EvalError::Unsupported(m),
        }
    }
}

/// `|F(z) - F(x*)| <= tol`.
pub fn judge_success(problem: &Problem, z: &[f64], tol: f64) -> Result<bool, EvalError> {
    let (_, f_star) = problem.optimum()?;
    let value = problem.worst_case_value(z)?;
    Ok((value - f_star).abs() <= tol)
}

/// How to obtain `F(x)` for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// The objective's own closed-form worst case.
    ClosedForm,
    /// Best of `n_starts` (1+1)-CMA-ES maximizations over the scenario box.
    Multistart { n_starts: usize, budget_per_start: u64 },
}

/// Worst-case value of `x` under `protocol`. The multistart estimate can only
/// undershoot the true maximum.
pub fn certify_worst_case(
    objective: &dyn MinMaxObjective,
    x: &[f64],
    protocol: Protocol,
    rng: &mut Rng,
) -> Result<f64, EvalError> {
    if x.len() != objective.dim_x() {
        return Err(EvalError::InvalidInput(format!(
            "x has dimension {}, expected {}",
            x.len(),
            objective.dim_x()
        )));
    }
    match protocol {
        Protocol::ClosedForm => objective
            .worst_case_oracle(x)
            .ok_or_else(|| EvalError::Unsupported("objective has no closed-form worst case".into())),
        Protocol::Multistart {
            n_starts,
            budget_per_start,
        } => {
            if n_starts == 0 {
                return Err(EvalError::InvalidInput("n_starts must be positive".into()));
            }
            let mut f = |y: &[f64]| objective.value(x, y);
            let (_, best) =
                multistart_maximize(&mut f, objective.y_domain(), n_starts, budget_per_start, rng);
            Ok(best)
        }
    }
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// ascending `sorted`. Infinite entries are allowed.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    if a == b {
        a
    } else if b.is_infinite() {
        b
    } else {
        a + frac * (b - a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FcallStats {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Gap percentiles over trials on a shared f-call grid. A trial contributes
/// the gap of its last logged point at or before each grid value (infinity
/// before its first point).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapCurves {
    pub fcalls: Vec<u64>,
    pub q25: Vec<f64>,
    pub q50: Vec<f64>,
    pub q75: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub n_trials: usize,
    pub n_success: usize,
    /// Over successful trials only; `None` when every trial failed.
    pub fcalls_to_success: Option<FcallStats>,
    pub curves: GapCurves,
}

const GRID_POINTS_PER_DECADE: f64 = 20.0;

pub fn aggregate(records: &[TrialRecord]) -> BatchSummary {
    assert!(!records.is_empty(), "aggregate needs at least one record");
    let mut hits: Vec<f64> = records
        .iter()
        .filter_map(|r| r.fcalls_to_success.map(|c| c as f64))
        .collect();
    hits.sort_by(f64::total_cmp);
    let fcalls_to_success = (!hits.is_empty()).then(|| FcallStats {
        median: quantile(&hits, 0.5),
        q25: quantile(&hits, 0.25),
        q75: quantile(&hits, 0.75),
    });
    BatchSummary {
        problem: records[0].problem.clone(),
        algorithm: records[0].algorithm,
        n_trials: records.len(),
        n_success: records.iter().filter(|r| r.success).count(),
        fcalls_to_success,
        curves: gap_curves(records),
    }
}

/// Log-spaced grid from the first to the last logged f-call of the batch.
fn fcall_grid(records: &[TrialRecord]) -> Vec<u64> {
    let points = records.iter().flat_map(|r| r.trace.iter().map(|p| p.fcalls));
    let (lo, hi) = points.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
    if hi == 0 && lo == u64::MAX {
        return Vec::new();
    }
    let lo = lo.max(1);
    let mut grid = vec![lo];
    let (a, b) = ((lo as f64).log10(), (hi as f64).log10());
    let steps = ((b - a) * GRID_POINTS_PER_DECADE).ceil() as usize;
    for k in 1..=steps {
        let c = 10f64.powf(a + (b - a) * k as f64 / steps as f64).round() as u64;
        let c = c.min(hi);
        if c > *grid.last().unwrap() {
            grid.push(c);
        }
    }
    if *grid.last().unwrap() < hi {
        grid.push(hi);
    }
    grid
}

fn gap_curves(records: &[TrialRecord]) -> GapCurves {
    let grid = fcall_grid(records);
    let mut cursors = vec![0usize; records.len()];
    let mut curves = GapCurves {
        fcalls: grid.clone(),
        q25: Vec::with_capacity(grid.len()),
        q50: Vec::with_capacity(grid.len()),
        q75: Vec::with_capacity(grid.len()),
    };
    let mut column = Vec::with_capacity(records.len());
    for &g in &grid {
        column.clear();
        for (r, cur) in records.iter().zip(cursors.iter_mut()) {
            while *cur < r.trace.len() && r.trace[*cur].fcalls <= g {
                *cur += 1;
            }
            let gap = if *cur == 0 {
                f64::INFINITY
            } else {
                r.trace[*cur - 1].gap
            };
            column.push(if gap.is_nan() { f64::INFINITY } else { gap });
        }
        column.sort_by(f64::total_cmp);
        curves.q25.push(quantile(&column, 0.25));
        curves.q50.push(quantile(&column, 0.5));
        curves.q75.push(quantile(&column, 0.75));
    }
    curves
}
