//! Worst-case ranking approximation: estimates the ranking of
//! `F(x_i) = max_y f(x_i, y)` over a population using a persistent pool of
//! scenarios and inner-solver configurations, warm starts, and Kendall-tau
//! early stopping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaes::{mirror_in_place, rank_ascending};
use crate::inner::{
    inner_round, AgaConfig, Incumbent, InnerCmaConfig, InnerSolverParams, SolverConfig, SolverKind, SolverTheta,
};
use crate::numerics::{Rng, SymMatrix};
use crate::objective::{Evaluator, MinMaxObjective};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WraError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WraParams {
    pub solver: SolverKind,
    pub pool_size: usize,
    pub tau_threshold: f64,
    pub p_threshold: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Hard cap on early-stopping rounds per call.
    pub max_rounds: usize,
    pub inner: InnerSolverParams,
}

impl Default for WraParams {
    fn default() -> Self {
        Self {
            solver: SolverKind::InnerCma,
            pool_size: 36,
            tau_threshold: 0.7,
            p_threshold: 0.1,
            p_plus: 0.4,
            p_minus: 0.05,
            max_rounds: 1000,
            inner: InnerSolverParams::default(),
        }
    }
}

impl WraParams {
    pub fn with_solver(solver: SolverKind) -> Self {
        Self {
            solver,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pool_size < 1 {
            return Err("pool_size must be at least 1".into());
        }
        if !(0.0 < self.p_threshold && self.p_threshold < self.p_plus && self.p_plus <= 1.0) {
            return Err("require 0 < p_threshold < p_plus <= 1".into());
        }
        if !(self.p_minus > 0.0) {
            return Err("p_minus must be positive".into());
        }
        if !(-1.0..=1.0).contains(&self.tau_threshold) {
            return Err("tau_threshold must lie in [-1, 1]".into());
        }
        if self.max_rounds < 1 {
            return Err("max_rounds must be at least 1".into());
        }
        self.inner.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub y: Vec<f64>,
    pub omega: SolverConfig,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioPool {
    pub entries: Vec<PoolEntry>,
    kind: SolverKind,
    eta0: f64,
}

impl ScenarioPool {
    /// Draws `n` fresh entries.
    ///
    /// Inner CMA-ES: `m ~ U(Y)`, `Sigma = (w/4)^2 I` with `w` the side length of `Y`
    /// (i.e. `(b_y / 2)^2 I` on `[-b_y, b_y]`), and `y ~ N(m, Sigma)` mirrored into `Y`.
    /// AGA: `y ~ U(Y)` and learning rate `eta0`.
    pub fn new(n: usize, objective: &dyn MinMaxObjective, kind: SolverKind, eta0: f64, rng: &mut Rng) -> Self {
        let mut pool = Self {
            entries: Vec::with_capacity(n),
            kind,
            eta0,
        };
        for _ in 0..n {
            let e = pool.fresh_entry(objective, rng);
            pool.entries.push(e);
        }
        pool
    }

    pub fn from_entries(entries: Vec<PoolEntry>, kind: SolverKind, eta0: f64) -> Self {
        Self { entries, kind, eta0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn scenarios(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.y.clone()).collect()
    }

    fn fresh_entry(&self, objective: &dyn MinMaxObjective, rng: &mut Rng) -> PoolEntry {
        let domain = objective.y_domain();
        match self.kind {
            SolverKind::InnerCma => {
                let mean = domain.sample_uniform(rng);
                let var: Vec<f64> = domain.widths().iter().map(|w| (w / 4.0).powi(2)).collect();
                let mut y: Vec<f64> = mean
                    .iter()
                    .zip(&var)
                    .map(|(m, v)| m + v.sqrt() * rng.normal())
                    .collect();
                mirror_in_place(&mut y, domain);
                PoolEntry {
                    y,
                    omega: SolverConfig::Cma(InnerCmaConfig::new(mean, SymMatrix::from_diag(&var))),
                    p: 1.0,
                }
            }
            SolverKind::Aga => PoolEntry {
                y: domain.sample_uniform(rng),
                omega: SolverConfig::Aga(AgaConfig { eta: self.eta0 }),
                p: 1.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WraOutcome {
    /// Approximate worst-case values `F_i` after the last round.
    pub approx_values: Vec<f64>,
    /// Ascending argsort of `approx_values`, ties by index.
    pub rankings: Vec<usize>,
    /// Worst-case scenario candidate found for each design.
    pub scenarios: Vec<Vec<f64>>,
    pub rounds_used: usize,
    pub fcalls_used: u64,
    /// Pool index each design was warm-started from.
    pub selected: Vec<usize>,
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm).
///
/// Returns 0 when either input is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, WraError> {
    if a.len() != b.len() {
        return Err(WraError::InvalidInput("length mismatch".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(WraError::InvalidInput("need at least two observations".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let pairs = |len: u64| len * len.saturating_sub(1) / 2;
    // ties in a, and joint ties in (a, b)
    let (mut tied_a, mut tied_ab) = (0u64, 0u64);
    let (mut run_a, mut run_ab) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        if a[i] == a[j] {
            run_a += 1;
            if b[i] == b[j] {
                run_ab += 1;
            } else {
                tied_ab += pairs(run_ab);
                run_ab = 1;
            }
        } else {
            tied_a += pairs(run_a);
            tied_ab += pairs(run_ab);
            run_a = 1;
            run_ab = 1;
        }
    }
    tied_a += pairs(run_a);
    tied_ab += pairs(run_ab);

    // merge sort by b counts discordant pairs as inversions
    let mut bs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = bs.clone();
    let swaps = merge_count(&mut bs, &mut buf);

    let mut tied_b = 0u64;
    let mut run_b = 1u64;
    for w in bs.windows(2) {
        if w[0] == w[1] {
            run_b += 1;
        } else {
            tied_b += pairs(run_b);
            run_b = 1;
        }
    }
    tied_b += pairs(run_b);

    let total = pairs(n as u64);
    let n1 = total - tied_a;
    let n2 = total - tied_b;
    if n1 == 0 || n2 == 0 {
        return Ok(0.0);
    }
    // concordant - discordant = total - ties_a - ties_b + joint_ties - 2 * discordant
    let numer = total as f64 - tied_a as f64 - tied_b as f64 + tied_ab as f64 - 2.0 * swaps as f64;
    Ok((numer / (n1 as f64 * n2 as f64).sqrt()).clamp(-1.0, 1.0))
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// One WRA call: warm start from the pool, early-stopped inner rounds, and
/// pool post-processing.
pub fn wra_approximate(
    pool: &mut ScenarioPool,
    candidates: &[Vec<f64>],
    params: &WraParams,
    eval: &Evaluator<'_>,
    rng: &mut Rng,
) -> Result<WraOutcome, WraError> {
    if candidates.is_empty() {
        return Err(WraError::InvalidInput("no candidates".into()));
    }
    if pool.is_empty() {
        return Err(WraError::InvalidInput("empty scenario pool".into()));
    }
    let start = eval.fcalls();
    let lambda = candidates.len();

    // warm start
    let mut selected = Vec::with_capacity(lambda);
    let mut best = Vec::with_capacity(lambda);
    for x in candidates {
        let mut k_best = 0;
        let mut f_best = f64::NEG_INFINITY;
        for (k, e) in pool.entries.iter().enumerate() {
            let v = eval.eval(x, &e.y);
            if v > f_best || (k == 0 && v.is_nan()) {
                k_best = k;
                f_best = v;
            }
        }
        selected.push(k_best);
        best.push(Incumbent {
            y: pool.entries[k_best].y.clone(),
            value: f_best,
        });
    }
    let mut omegas: Vec<SolverConfig> = selected.iter().map(|&k| pool.entries[k].omega.clone()).collect();

    // early-stopped rounds
    let base = rng.next_u64();
    let mut streams: Vec<Rng> = (0..lambda).map(|i| Rng::derive(base, i as u64)).collect();
    let mut thetas: Vec<SolverTheta> = omegas.iter().map(|o| SolverTheta::new(o, eval)).collect();
    let mut prev: Vec<f64> = best.iter().map(|b| b.value).collect();
    let mut rounds = 0;
    while rounds < params.max_rounds && !eval.exhausted() && !thetas.iter().all(|t| t.terminated()) {
        for i in 0..lambda {
            inner_round(
                eval,
                &candidates[i],
                &mut best[i],
                &mut omegas[i],
                &mut thetas[i],
                &params.inner,
                &mut streams[i],
            );
        }
        rounds += 1;
        let cur: Vec<f64> = best.iter().map(|b| b.value).collect();
        let tau = if lambda < 2 { 1.0 } else { kendall_tau(&prev, &cur)? };
        prev = cur;
        if tau > params.tau_threshold {
            break;
        }
    }

    // post-processing
    let n = pool.len();
    let mut used = vec![false; n];
    for &k in &selected {
        if used[k] {
            continue;
        }
        used[k] = true;
        let rep = (0..lambda)
            .filter(|&i| selected[i] == k)
            .min_by(|&i, &j| best[i].value.total_cmp(&best[j].value).then(i.cmp(&j)))
            .expect("k was selected by some candidate");
        let e = &mut pool.entries[k];
        e.y.clone_from(&best[rep].y);
        e.omega = omegas[rep].clone();
        e.p = (e.p + params.p_plus).min(1.0);
    }
    for k in 0..n {
        if !used[k] {
            pool.entries[k].p -= params.p_minus;
        }
        if pool.entries[k].p < params.p_threshold {
            pool.entries[k] = pool.fresh_entry(eval.objective, rng);
        }
    }

    let approx_values: Vec<f64> = best.iter().map(|b| b.value).collect();
    Ok(WraOutcome {
        rankings: rank_ascending(&approx_values),
        approx_values,
        scenarios: best.into_iter().map(|b| b.y).collect(),
        rounds_used: rounds,
        fcalls_used: eval.fcalls() - start,
        selected,
    })
}
