//! Top-level min–max algorithms: WRA with an outer CMA-ES, a restart
//! wrapper, the adversarial local-search hybrid, and two baselines
//! (Adversarial CMA-ES and ZO-PGDA).
//!
//! Every driver logs `|F(z) - F*|` at each outer iteration using the
//! closed-form worst case, which is not charged to the optimization budget.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaes::{CmaError, PopulationCma, TerminationReason};
use crate::elitist::{ElitistCma, Sense};
use crate::inner::{SolverConfig, SolverKind};
use crate::numerics::{Rng, SymMatrix};
use crate::objective::{Evaluator, FcallCounter, MinMaxObjective};
use crate::problems::{BoxDomain, Problem, ProblemError, ProblemSpec};
use crate::wra::{wra_approximate, ScenarioPool, WraError, WraOutcome, WraParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Cma(#[from] CmaError),
    #[error(transparent)]
    Wra(#[from] WraError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "wra-cma")]
    WraCma,
    #[serde(rename = "wra-aga")]
    WraAga,
    #[serde(rename = "wra-cma+adv")]
    WraCmaAdv,
    #[serde(rename = "wra-aga+adv")]
    WraAgaAdv,
    #[serde(rename = "adv-cma")]
    AdvCma,
    #[serde(rename = "zopgda")]
    ZoPgda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::WraCma,
        Algorithm::WraAga,
        Algorithm::WraCmaAdv,
        Algorithm::WraAgaAdv,
        Algorithm::AdvCma,
        Algorithm::ZoPgda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::WraCma => "wra-cma",
            Algorithm::WraAga => "wra-aga",
            Algorithm::WraCmaAdv => "wra-cma+adv",
            Algorithm::WraAgaAdv => "wra-aga+adv",
            Algorithm::AdvCma => "adv-cma",
            Algorithm::ZoPgda => "zopgda",
        }
    }

    /// Inner solver of the WRA-based variants.
    pub fn solver(self) -> Option<SolverKind> {
        match self {
            Algorithm::WraCma | Algorithm::WraCmaAdv => Some(SolverKind::InnerCma),
            Algorithm::WraAga | Algorithm::WraAgaAdv => Some(SolverKind::Aga),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    BudgetExhausted,
    StdDevConverged,
    IllConditioned,
    Stagnation,
    /// An iterate or estimate became non-finite.
    Diverged,
    /// The local search reached its restart condition.
    LocalConverged,
}

impl From<TerminationReason> for StopReason {
    fn from(t: TerminationReason) -> Self {
        match t {
            TerminationReason::StdDevConverged => StopReason::StdDevConverged,
            TerminationReason::IllConditioned => StopReason::IllConditioned,
        }
    }
}

/// Outer-loop settings shared by all drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterOptions {
    /// Outer population size; `None` uses the CMA-ES default.
    pub lambda: Option<usize>,
    pub v_min_x: f64,
    pub cond_max_x: f64,
    /// A logged point with gap at most this counts as a success.
    pub success_tol: f64,
    /// End the trial at the first successful point.
    pub stop_at_success: bool,
    /// Stop when the best approximate worst-case value improved by less than
    /// `stagnation_min_improvement` over the last `stagnation_window` iterations.
    pub stagnation: bool,
    pub stagnation_window: usize,
    pub stagnation_min_improvement: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            v_min_x: 1e-12,
            cond_max_x: 1e14,
            success_tol: 1e-6,
            stop_at_success: true,
            stagnation: false,
            stagnation_window: 10,
            stagnation_min_improvement: 0.01,
        }
    }
}

impl OuterOptions {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(l) = self.lambda {
            if l < 2 {
                return Err("outer.lambda must be at least 2".into());
            }
        }
        if !(self.v_min_x > 0.0) || !(self.cond_max_x > 1.0) || !(self.success_tol >= 0.0) {
            return Err("outer.v_min_x, outer.cond_max_x and outer.success_tol must be positive".into());
        }
        if self.stagnation_window == 0 {
            return Err("outer.stagnation_window must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestartOptions {
    /// Restart WRA after internal termination instead of ending the trial.
    pub enabled: bool,
    /// Random scenarios added to `Y*` before the final pick.
    pub extra_scenarios: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvCmaConfig {
    pub g_tol: f64,
    pub eta_min: f64,
    pub eta0: f64,
    pub sigma_min: f64,
    /// (1+1)-CMA-ES offspring per direction per iteration; `None` means `10 * dim`.
    pub inner_budget: Option<u64>,
    pub restarts: bool,
}

impl Default for AdvCmaConfig {
    fn default() -> Self {
        Self {
            g_tol: 1e-6,
            eta_min: 1e-4,
            eta0: 1.0,
            sigma_min: 1e-8,
            inner_budget: None,
            restarts: true,
        }
    }
}

impl AdvCmaConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.g_tol > 0.0
            && self.eta_min > 0.0
            && self.eta0 >= self.eta_min
            && self.eta0 <= 1.0
            && self.sigma_min > 0.0
            && self.inner_budget != Some(0);
        if ok {
            Ok(())
        } else {
            Err("adv: g_tol, eta_min, sigma_min and inner_budget must be positive, eta_min <= eta0 <= 1".into())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoPgdaConfig {
    pub eta_x: f64,
    pub eta_y: f64,
    pub q: usize,
    pub mu: f64,
    pub restart: bool,
    pub restart_threshold: f64,
}

impl Default for ZoPgdaConfig {
    fn default() -> Self {
        Self {
            eta_x: 0.02,
            eta_y: 0.05,
            q: 5,
            mu: 1e-3,
            restart: false,
            restart_threshold: 1e-5,
        }
    }
}

impl ZoPgdaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.eta_x > 0.0 && self.eta_y > 0.0 && self.q >= 1 && self.mu > 0.0 && self.restart_threshold >= 0.0 {
            Ok(())
        } else {
            Err("zo: eta_x, eta_y, mu must be positive and q at least 1".into())
        }
    }
}

/// Hyperparameters of every algorithm; each driver reads its own part.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmConfig {
    pub wra: WraParams,
    pub outer: OuterOptions,
    pub restart: RestartOptions,
    pub adv: AdvCmaConfig,
    pub zo: ZoPgdaConfig,
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.wra.validate()?;
        self.outer.validate()?;
        self.adv.validate()?;
        self.zo.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub fcalls: u64,
    pub iteration: u64,
    pub gap: f64,
    pub best_approx_f: f64,
    pub restarts: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub budget: u64,
    /// Optimization f-calls actually spent.
    pub fcalls: u64,
    pub iterations: u64,
    pub trace: Vec<TracePoint>,
    pub restarts: u32,
    pub final_x: Vec<f64>,
    pub final_gap: f64,
    pub best_gap: f64,
    pub success: bool,
    pub fcalls_to_success: Option<u64>,
    pub stop_reason: StopReason,
    /// f-calls spent on the final archive pick, outside the budget.
    pub certification_fcalls: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Gap logging against the closed-form worst case.
pub struct Monitor<'p> {
    problem: &'p Problem,
    f_star: f64,
    tol: f64,
    budget: u64,
    trace: Vec<TracePoint>,
    best_gap: f64,
    success_at: Option<u64>,
    iteration: u64,
}

impl<'p> Monitor<'p> {
    pub fn new(problem: &'p Problem, tol: f64, budget: u64) -> Result<Self, DriverError> {
        let (_, f_star) = problem.optimum()?;
        Ok(Self {
            problem,
            f_star,
            tol,
            budget,
            trace: Vec::new(),
            best_gap: f64::INFINITY,
            success_at: None,
            iteration: 0,
        })
    }

    /// `|F(z) - F*|`, infinite for non-finite `z` or values.
    pub fn gap(&self, z: &[f64]) -> f64 {
        if z.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let g = (self.problem.worst_value_unchecked(z) - self.f_star).abs();
        if g.is_nan() {
            f64::INFINITY
        } else {
            g
        }
    }

    /// Logs one outer iteration at design `z`; returns whether `z` is a success.
    pub fn log(&mut self, fcalls: u64, z: &[f64], best_approx_f: f64, restarts: u32) -> bool {
        self.iteration += 1;
        let gap = self.gap(z);
        let point = TracePoint {
            fcalls,
            iteration: self.iteration,
            gap,
            best_approx_f,
            restarts,
        };
        match self.trace.last_mut() {
            Some(last) if last.fcalls >= fcalls => *last = point,
            _ => self.trace.push(point),
        }
        self.best_gap = self.best_gap.min(gap);
        let hit = gap <= self.tol && fcalls <= self.budget;
        if hit && self.success_at.is_none() {
            self.success_at = Some(fcalls);
        }
        hit
    }

    pub fn iterations(&self) -> u64 {
        self.iteration
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        seed: u64,
        algorithm: Algorithm,
        fcalls: u64,
        final_x: Vec<f64>,
        restarts: u32,
        stop_reason: StopReason,
        certification_fcalls: u64,
        started: Instant,
    ) -> TrialRecord {
        let final_gap = self.gap(&final_x);
        TrialRecord {
            seed,
            algorithm,
            problem: self.problem.spec().clone(),
            budget: self.budget,
            fcalls,
            iterations: self.iteration,
            trace: self.trace,
            restarts,
            final_x,
            final_gap,
            best_gap: self.best_gap.min(final_gap),
            success: self.success_at.is_some(),
            fcalls_to_success: self.success_at,
            stop_reason,
            certification_fcalls,
            wall_time: started.elapsed(),
        }
    }
}

/// One WRA run without restarts: outer CMA-ES over designs, WRA for rankings.
pub struct WraSession<'a> {
    objective: &'a dyn MinMaxObjective,
    params: WraParams,
    outer: PopulationCma,
    pool: ScenarioPool,
    rng: Rng,
    last_candidates: Vec<Vec<f64>>,
    last_outcome: Option<WraOutcome>,
}

impl<'a> WraSession<'a> {
    /// Mean drawn uniformly from the design box, covariance `((u - l) / 4)^2 I`.
    pub fn new(
        objective: &'a dyn MinMaxObjective,
        params: &WraParams,
        opts: &OuterOptions,
        mut rng: Rng,
    ) -> Result<Self, DriverError> {
        params.validate().map_err(DriverError::InvalidInput)?;
        opts.validate().map_err(DriverError::InvalidInput)?;
        let xd = objective.x_domain();
        let mean0 = xd.sample_uniform(&mut rng);
        let var: Vec<f64> = xd.widths().iter().map(|w| (w / 4.0).powi(2)).collect();
        let outer = PopulationCma::new(
            mean0,
            SymMatrix::from_diag(&var),
            objective.x_constraint().cloned(),
            opts.lambda,
        )?;
        let pool = ScenarioPool::new(params.pool_size, objective, params.solver, params.inner.eta0, &mut rng);
        Ok(Self {
            objective,
            params: params.clone(),
            outer,
            pool,
            rng,
            last_candidates: Vec::new(),
            last_outcome: None,
        })
    }

    /// f-calls of the warm start alone.
    pub fn warm_start_cost(&self) -> u64 {
        (self.outer.lambda() * self.pool.len()) as u64
    }

    /// ask, WRA, tell.
    pub fn step(&mut self, eval: &Evaluator<'_>) -> Result<&WraOutcome, DriverError> {
        let cands = self.outer.ask(&mut self.rng);
        let out = wra_approximate(&mut self.pool, &cands, &self.params, eval, &mut self.rng)?;
        self.outer.tell(&out.rankings)?;
        self.outer.cap_to_domain()?;
        self.last_candidates = cands;
        Ok(self.last_outcome.insert(out))
    }

    pub fn outer(&self) -> &PopulationCma {
        &self.outer
    }

    pub fn pool(&self) -> &ScenarioPool {
        &self.pool
    }

    pub fn objective(&self) -> &'a dyn MinMaxObjective {
        self.objective
    }

    pub fn last_candidates(&self) -> &[Vec<f64>] {
        &self.last_candidates
    }

    pub fn last_outcome(&self) -> Option<&WraOutcome> {
        self.last_outcome.as_ref()
    }

    pub fn termination(&self, opts: &OuterOptions) -> Option<TerminationReason> {
        self.outer.should_terminate(opts.v_min_x, opts.cond_max_x)
    }
}

/// Iterates a session until success, budget, outer termination or stagnation.
fn drive_wra(
    session: &mut WraSession<'_>,
    eval: &Evaluator<'_>,
    opts: &OuterOptions,
    monitor: &mut Monitor<'_>,
    restarts: u32,
) -> Result<StopReason, DriverError> {
    let mut best = f64::INFINITY;
    let mut history = Vec::new();
    loop {
        if eval.fcalls() + session.warm_start_cost() > eval.limit {
            return Ok(StopReason::BudgetExhausted);
        }
        let out = session.step(eval)?;
        let cur = out.approx_values.iter().copied().fold(f64::INFINITY, f64::min);
        best = best.min(cur);
        history.push(best);
        let hit = monitor.log(eval.fcalls(), &session.outer().effective_mean(), cur, restarts);
        if hit && opts.stop_at_success {
            return Ok(StopReason::TargetReached);
        }
        if eval.exhausted() {
            return Ok(StopReason::BudgetExhausted);
        }
        if let Some(t) = session.termination(opts) {
            return Ok(t.into());
        }
        let w = opts.stagnation_window;
        if opts.stagnation && history.len() > w && history[history.len() - 1 - w] - best < opts.stagnation_min_improvement {
            return Ok(StopReason::Stagnation);
        }
    }
}

/// WRA-CMA or WRA-AGA (per `params.solver`) without restarts; the final
/// design is the outer mean.
pub fn run_wra(
    problem: &Problem,
    params: &WraParams,
    opts: &OuterOptions,
    budget: u64,
    seed: u64,
) -> Result<TrialRecord, DriverError> {
    let started = Instant::now();
    let counter = FcallCounter::new();
    let eval = Evaluator::new(problem, &counter).with_limit(budget);
    let mut monitor = Monitor::new(problem, opts.success_tol, budget)?;
    let mut session = WraSession::new(problem, params, opts, Rng::new(seed))?;
    let stop = drive_wra(&mut session, &eval, opts, &mut monitor, 0)?;
    let algorithm = match params.solver {
        SolverKind::InnerCma => Algorithm::WraCma,
        SolverKind::Aga => Algorithm::WraAga,
    };
    let final_x = session.outer().effective_mean();
    Ok(monitor.finish(seed, algorithm, counter.count(), final_x, 0, stop, 0, started))
}

/// Designs and scenarios collected over restarts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RestartArchive {
    pub x_star: Vec<Vec<f64>>,
    pub y_star: Vec<Vec<f64>>,
}

impl RestartArchive {
    pub fn push(&mut self, xs: &[Vec<f64>], ys: &[Vec<f64>]) {
        self.x_star.extend_from_slice(xs);
        self.y_star.extend_from_slice(ys);
    }

    pub fn add_random_scenarios(&mut self, domain: &BoxDomain, r: usize, rng: &mut Rng) {
        for _ in 0..r {
            self.y_star.push(domain.sample_uniform(rng));
        }
    }

    /// `argmin_{x in X*} max_{y in Y*} f(x, y)` with its value; the first index wins ties.
    pub fn select(&self, eval: &Evaluator<'_>) -> Option<(usize, f64)> {
        if self.y_star.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, x) in self.x_star.iter().enumerate() {
            let v = self
                .y_star
                .iter()
                .map(|y| eval.eval(x, y))
                .fold(f64::NEG_INFINITY, |a, b| if b > a || b.is_nan() { b } else { a });
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best
    }
}

/// What a single restart session leaves behind.
pub struct SessionEnd {
    pub stop: StopReason,
    /// The session's current design.
    pub z: Vec<f64>,
    /// The last population, archived into `X*`.
    pub last_x: Vec<Vec<f64>>,
    /// The scenarios archived into `Y*`.
    pub last_y: Vec<Vec<f64>>,
}

/// Runs `session` repeatedly with fresh sub-seeds until success or budget
/// exhaustion (or once, when restarts are disabled), then picks the final
/// design from the archive on a separate certification counter.
///
/// `session` receives the evaluator, its own RNG, the monitor and the number
/// of restarts so far.
#[allow(clippy::too_many_arguments)]
pub fn run_with_restarts<F>(
    problem: &Problem,
    algorithm: Algorithm,
    restart: &RestartOptions,
    opts: &OuterOptions,
    budget: u64,
    seed: u64,
    mut session: F,
) -> Result<(TrialRecord, RestartArchive), DriverError>
where
    F: FnMut(&Evaluator<'_>, Rng, &mut Monitor<'_>, u32) -> Result<SessionEnd, DriverError>,
{
    if budget == 0 {
        return Err(DriverError::InvalidInput("budget must be positive".into()));
    }
    let started = Instant::now();
    let counter = FcallCounter::new();
    let eval = Evaluator::new(problem, &counter).with_limit(budget);
    let mut monitor = Monitor::new(problem, opts.success_tol, budget)?;
    let mut archive = RestartArchive::default();
    let mut restarts = 0u32;
    let mut last_z;
    let stop = loop {
        let end = session(&eval, Rng::derive(seed, restarts as u64), &mut monitor, restarts)?;
        archive.push(std::slice::from_ref(&end.z), &[]);
        archive.push(&end.last_x, &end.last_y);
        last_z = end.z;
        let done = matches!(end.stop, StopReason::TargetReached | StopReason::BudgetExhausted);
        if done || eval.exhausted() || !restart.enabled {
            break end.stop;
        }
        restarts += 1;
    };
    if restart.extra_scenarios > 0 {
        let mut rng = Rng::derive(seed, u64::MAX);
        archive.add_random_scenarios(problem.y_domain(), restart.extra_scenarios, &mut rng);
    }
    let cert = FcallCounter::new();
    let final_x = match archive.select(&Evaluator::new(problem, &cert)) {
        Some((i, _)) => archive.x_star[i].clone(),
        None => last_z,
    };
    let record = monitor.finish(seed, algorithm, counter.count(), final_x, restarts, stop, cert.count(), started);
    Ok((record, archive))
}

/// One Adversarial CMA-ES state: the iterate, two warm-started (1+1)-CMA-ES
/// best-response trackers and the shared learning rate.
pub struct AdvState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    es_x: ElitistCma,
    es_y: ElitistCma,
    eta: f64,
    progress: f64,
}

impl AdvState {
    pub fn new(x: Vec<f64>, y: Vec<f64>, es_x: ElitistCma, es_y: ElitistCma, eta: f64) -> Self {
        Self {
            x,
            y,
            es_x,
            es_y,
            eta,
            progress: f64::INFINITY,
        }
    }

    /// Uniform `(x, y)` with step sizes a quarter of the widest box side.
    fn fresh(objective: &dyn MinMaxObjective, eval: &dyn Fn(&[f64], &[f64]) -> f64, eta: f64, rng: &mut Rng) -> Self {
        let x = objective.x_domain().sample_uniform(rng);
        let y = objective.y_domain().sample_uniform(rng);
        let v = eval(&x, &y);
        let sx = objective.x_domain().widths().into_iter().fold(0.0, f64::max) / 4.0;
        let sy = objective.y_domain().widths().into_iter().fold(0.0, f64::max) / 4.0;
        let es_x = ElitistCma::new(x.clone(), v, sx, objective.x_constraint().cloned(), Sense::Minimize);
        let es_y = ElitistCma::new(y.clone(), v, sy, objective.y_constraint().cloned(), Sense::Maximize);
        Self::new(x, y, es_x, es_y, eta)
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta
    }
}

/// `max_{y' in {y} ∪ extra} f(x, y')`, charging `1 + extra.len()` f-calls.
fn surrogate_value(eval: &Evaluator<'_>, extra: &[Vec<f64>], x: &[f64], y: &[f64]) -> f64 {
    extra
        .iter()
        .map(|e| eval.eval(x, e))
        .fold(eval.eval(x, y), |a, b| if b > a || b.is_nan() { b } else { a })
}

/// Adversarial CMA-ES iterations on `f` (or its scenario-augmented surrogate
/// when `extra` is non-empty) until the restart condition, success or budget.
fn adv_segment(
    state: &mut AdvState,
    eval: &Evaluator<'_>,
    extra: &[Vec<f64>],
    cfg: &AdvCmaConfig,
    opts: &OuterOptions,
    monitor: &mut Monitor<'_>,
    restarts: u32,
    rng: &mut Rng,
) -> StopReason {
    let n_inner_x = cfg.inner_budget.unwrap_or(10 * state.x.len() as u64);
    let n_inner_y = cfg.inner_budget.unwrap_or(10 * state.y.len() as u64);
    let f = |x: &[f64], y: &[f64]| surrogate_value(eval, extra, x, y);
    loop {
        if eval.exhausted() {
            return StopReason::BudgetExhausted;
        }
        // x̄ ≈ argmin_x f(x, y), warm-started from the previous x̄
        let y = state.y.clone();
        state.es_x.reset_value(f(state.es_x.incumbent(), &y));
        for _ in 0..n_inner_x {
            if eval.exhausted() {
                break;
            }
            state.es_x.step(&mut |x| f(x, &y), rng);
        }
        let x = state.x.clone();
        state.es_y.reset_value(f(&x, state.es_y.incumbent()));
        for _ in 0..n_inner_y {
            if eval.exhausted() {
                break;
            }
            state.es_y.step(&mut |y| f(&x, y), rng);
        }
        if eval.exhausted() {
            return StopReason::BudgetExhausted;
        }

        let f_x_ybar = state.es_y.value();
        let f_xbar_y = state.es_x.value();
        let progress = f_x_ybar.max(-f_xbar_y);
        state.eta = if progress < state.progress { state.eta * 1.1 } else { state.eta * 0.7 };
        state.eta = state.eta.clamp(cfg.eta_min, 1.0);
        state.progress = progress;

        let eta = state.eta;
        let mut step_sq = 0.0;
        for (xi, xb) in state.x.iter_mut().zip(state.es_x.incumbent()) {
            let d = eta * (xb - *xi);
            step_sq += d * d;
            *xi += d;
        }
        for (yi, yb) in state.y.iter_mut().zip(state.es_y.incumbent()) {
            let d = eta * (yb - *yi);
            step_sq += d * d;
            *yi += d;
        }
        if !step_sq.is_finite() || state.x.iter().chain(&state.y).any(|v| !v.is_finite()) {
            return StopReason::Diverged;
        }
        let hit = monitor.log(eval.fcalls(), &state.x, f_x_ybar, restarts);
        if hit && opts.stop_at_success {
            return StopReason::TargetReached;
        }
        let stalled = state.es_x.max_coordinate_stddev() < cfg.sigma_min || state.es_y.max_coordinate_stddev() < cfg.sigma_min;
        if step_sq < cfg.g_tol || stalled {
            return StopReason::LocalConverged;
        }
    }
}

/// Adversarial CMA-ES baseline with restarts from fresh uniform states.
pub fn run_adversarial_cmaes(
    problem: &Problem,
    cfg: &AdvCmaConfig,
    opts: &OuterOptions,
    budget: u64,
    seed: u64,
) -> Result<TrialRecord, DriverError> {
    cfg.validate().map_err(DriverError::InvalidInput)?;
    let restart = RestartOptions {
        enabled: cfg.restarts,
        extra_scenarios: 0,
    };
    let (record, _) = run_with_restarts(problem, Algorithm::AdvCma, &restart, opts, budget, seed, |eval, mut rng, monitor, restarts| {
        let mut state = AdvState::fresh(problem, &|x, y| eval.eval(x, y), cfg.eta0, &mut rng);
        let stop = adv_segment(&mut state, eval, &[], cfg, opts, monitor, restarts, &mut rng);
        Ok(SessionEnd {
            stop,
            z: state.x.clone(),
            last_x: vec![state.x],
            last_y: vec![state.y],
        })
    })?;
    Ok(record)
}

/// Adversarial CMA-ES on `f_Y(x, y) = max_{y' in {y} ∪ Y} f(x, y')` started
/// from a terminated WRA session.
///
/// Starts at the population member with the smallest pool worst case and the
/// pool scenario attaining it. The x-side copies the outer search
/// distribution; the y-side copies the scenario's inner CMA-ES distribution,
/// or uses `1e-2 (b_y / 2)^2 I` after AGA. Returns `None` when the session
/// has no population yet.
#[allow(clippy::too_many_arguments)]
pub fn local_search_hybrid(
    session: &WraSession<'_>,
    eval: &Evaluator<'_>,
    cfg: &AdvCmaConfig,
    opts: &OuterOptions,
    monitor: &mut Monitor<'_>,
    restarts: u32,
    rng: &mut Rng,
) -> Option<(StopReason, AdvState)> {
    let cands = session.last_candidates();
    if cands.is_empty() || eval.exhausted() {
        return None;
    }
    let objective = session.objective();
    let pool = session.pool();
    let scenarios = pool.scenarios();
    let mut i_adv = 0;
    let mut k_adv = 0;
    let mut f_best = f64::INFINITY;
    for (i, x) in cands.iter().enumerate() {
        let (k, v) = scenarios
            .iter()
            .enumerate()
            .map(|(k, y)| (k, eval.eval(x, y)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        if v < f_best || i == 0 {
            f_best = v;
            i_adv = i;
            k_adv = k;
        }
    }
    let x0 = cands[i_adv].clone();
    let y0 = scenarios[k_adv].clone();
    let mut extra = scenarios;
    extra.remove(k_adv);
    let v0 = surrogate_value(eval, &extra, &x0, &y0);

    let outer = session.outer();
    let es_x = ElitistCma::with_cov(
        x0.clone(),
        v0,
        outer.step_size(),
        outer.cov().clone(),
        objective.x_constraint().cloned(),
        Sense::Minimize,
    )
    .unwrap_or_else(|| {
        ElitistCma::new(x0.clone(), v0, outer.max_coordinate_stddev(), objective.x_constraint().cloned(), Sense::Minimize)
    });
    let y_box = objective.y_constraint().cloned();
    let aga_sigma = 0.1 * objective.y_domain().widths().into_iter().fold(0.0, f64::max) / 4.0;
    let es_y = match &pool.entries[k_adv].omega {
        SolverConfig::Cma(o) => ElitistCma::with_cov(y0.clone(), v0, 1.0, o.cov.clone(), y_box.clone(), Sense::Maximize),
        SolverConfig::Aga(_) => None,
    }
    .unwrap_or_else(|| ElitistCma::new(y0.clone(), v0, aga_sigma, y_box, Sense::Maximize));

    let mut state = AdvState::new(x0, y0, es_x, es_y, cfg.eta0);
    let stop = adv_segment(&mut state, eval, &extra, cfg, opts, monitor, restarts, rng);
    Some((stop, state))
}

/// WRA followed by the adversarial local search once the outer CMA-ES
/// terminates; the whole pipeline restarts when enabled.
pub fn run_wra_hybrid(
    problem: &Problem,
    config: &AlgorithmConfig,
    solver: SolverKind,
    budget: u64,
    seed: u64,
) -> Result<TrialRecord, DriverError> {
    config.validate().map_err(DriverError::InvalidInput)?;
    let params = WraParams {
        solver,
        ..config.wra.clone()
    };
    let algorithm = match solver {
        SolverKind::InnerCma => Algorithm::WraCmaAdv,
        SolverKind::Aga => Algorithm::WraAgaAdv,
    };
    let opts = &config.outer;
    let (record, _) = run_with_restarts(problem, algorithm, &config.restart, opts, budget, seed, |eval, rng, monitor, restarts| {
        let mut local_rng = rng.clone().fork(1);
        let mut session = WraSession::new(problem, &params, opts, rng)?;
        let mut stop = drive_wra(&mut session, eval, opts, monitor, restarts)?;
        let mut z = session.outer().effective_mean();
        let last_x = session.last_candidates().to_vec();
        let mut last_y = session.pool().scenarios();
        if !matches!(stop, StopReason::TargetReached | StopReason::BudgetExhausted) {
            if let Some((s, state)) = local_search_hybrid(&session, eval, &config.adv, opts, monitor, restarts, &mut local_rng) {
                stop = s;
                z = state.x;
                last_y.push(state.y);
            }
        }
        Ok(SessionEnd { stop, z, last_x, last_y })
    })?;
    Ok(record)
}

/// WRA with restarts and the archive pick, without the local search.
pub fn run_wra_restarts(
    problem: &Problem,
    config: &AlgorithmConfig,
    solver: SolverKind,
    budget: u64,
    seed: u64,
) -> Result<(TrialRecord, RestartArchive), DriverError> {
    let params = WraParams {
        solver,
        ..config.wra.clone()
    };
    let algorithm = match solver {
        SolverKind::InnerCma => Algorithm::WraCma,
        SolverKind::Aga => Algorithm::WraAga,
    };
    let opts = &config.outer;
    run_with_restarts(problem, algorithm, &config.restart, opts, budget, seed, |eval, rng, monitor, restarts| {
        let mut session = WraSession::new(problem, &params, opts, rng)?;
        let stop = drive_wra(&mut session, eval, opts, monitor, restarts)?;
        Ok(SessionEnd {
            stop,
            z: session.outer().effective_mean(),
            last_x: session.last_candidates().to_vec(),
            last_y: session.pool().scenarios(),
        })
    })
}

/// Random-direction gradient estimate
/// `(d / (q mu)) sum_j (f(v + mu u_j) - f(v)) u_j` with `u_j` uniform on the
/// unit sphere. Costs `q + 1` evaluations; returns the estimate and `f(v)`.
pub fn zo_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    v: &[f64],
    q: usize,
    mu: f64,
    rng: &mut Rng,
) -> (Vec<f64>, f64) {
    let d = v.len();
    let base = f(v);
    let mut grad = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut probe = vec![0.0; d];
    for _ in 0..q {
        loop {
            rng.fill_normal(&mut u);
            let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                u.iter_mut().for_each(|a| *a /= norm);
                break;
            }
        }
        for ((p, vi), ui) in probe.iter_mut().zip(v).zip(&u) {
            *p = vi + mu * ui;
        }
        let diff = f(&probe) - base;
        for (g, ui) in grad.iter_mut().zip(&u) {
            *g += diff * ui;
        }
    }
    let scale = d as f64 / (q as f64 * mu);
    grad.iter_mut().for_each(|g| *g *= scale);
    (grad, base)
}

/// ZO-PGDA: simultaneous projected descent–ascent on zeroth-order gradients.
pub fn run_zopgda(
    problem: &Problem,
    cfg: &ZoPgdaConfig,
    opts: &OuterOptions,
    budget: u64,
    seed: u64,
) -> Result<TrialRecord, DriverError> {
    cfg.validate().map_err(DriverError::InvalidInput)?;
    if budget == 0 {
        return Err(DriverError::InvalidInput("budget must be positive".into()));
    }
    let started = Instant::now();
    let counter = FcallCounter::new();
    let eval = Evaluator::new(problem, &counter).with_limit(budget);
    let mut monitor = Monitor::new(problem, opts.success_tol, budget)?;
    let mut rng = Rng::new(seed);
    let x_box = problem.x_constraint().cloned();
    let y_box = problem.y_constraint().cloned();
    let mut x = problem.x_domain().sample_uniform(&mut rng);
    let mut y = problem.y_domain().sample_uniform(&mut rng);
    let per_iter = 2 * (cfg.q as u64 + 1);
    let mut restarts = 0;
    let stop = loop {
        if counter.count() + per_iter > budget {
            break StopReason::BudgetExhausted;
        }
        let yc = y.clone();
        let (gx, fxy) = zo_gradient(&mut |v| eval.eval(v, &yc), &x, cfg.q, cfg.mu, &mut rng);
        let xc = x.clone();
        let (gy, _) = zo_gradient(&mut |v| eval.eval(&xc, v), &y, cfg.q, cfg.mu, &mut rng);
        let mut step_sq = 0.0;
        for (xi, g) in x.iter_mut().zip(&gx) {
            let d = cfg.eta_x * g;
            step_sq += d * d;
            *xi -= d;
        }
        for (yi, g) in y.iter_mut().zip(&gy) {
            let d = cfg.eta_y * g;
            step_sq += d * d;
            *yi += d;
        }
        if let Some(b) = &x_box {
            b.clip(&mut x);
        }
        if let Some(b) = &y_box {
            b.clip(&mut y);
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            break StopReason::Diverged;
        }
        let hit = monitor.log(counter.count(), &x, fxy, restarts);
        if hit && opts.stop_at_success {
            break StopReason::TargetReached;
        }
        if cfg.restart && step_sq <= cfg.restart_threshold {
            x = problem.x_domain().sample_uniform(&mut rng);
            y = problem.y_domain().sample_uniform(&mut rng);
            restarts += 1;
        }
    };
    let final_x = if x.iter().all(|v| v.is_finite()) {
        x
    } else {
        vec![f64::NAN; problem.dx()]
    };
    Ok(monitor.finish(seed, Algorithm::ZoPgda, counter.count(), final_x, restarts, stop, 0, started))
}

/// Runs one trial of `algorithm` with the relevant part of `config`.
pub fn run_trial(
    problem: &Problem,
    algorithm: Algorithm,
    config: &AlgorithmConfig,
    budget: u64,
    seed: u64,
) -> Result<TrialRecord, DriverError> {
    config.validate().map_err(DriverError::InvalidInput)?;
    match algorithm {
        Algorithm::WraCma | Algorithm::WraAga => {
            let solver = algorithm.solver().expect("WRA variant");
            if config.restart.enabled {
                run_wra_restarts(problem, config, solver, budget, seed).map(|(r, _)| r)
            } else {
                let params = WraParams {
                    solver,
                    ..config.wra.clone()
                };
                run_wra(problem, &params, &config.outer, budget, seed)
            }
        }
        Algorithm::WraCmaAdv | Algorithm::WraAgaAdv => {
            run_wra_hybrid(problem, config, algorithm.solver().expect("WRA variant"), budget, seed)
        }
        Algorithm::AdvCma => run_adversarial_cmaes(problem, &config.adv, &config.outer, budget, seed),
        Algorithm::ZoPgda => run_zopgda(problem, &config.zo, &config.outer, budget, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemId;
    use crate::FnObjective;

    fn f5(d: usize, b: f64) -> Problem {
        ProblemSpec::new(ProblemId::F5, d, b).build().unwrap()
    }

    fn same_run(a: &TrialRecord, b: &TrialRecord) -> bool {
        a.trace == b.trace && a.final_x == b.final_x && a.fcalls == b.fcalls && a.stop_reason == b.stop_reason
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{a}\""));
        }
        assert!("wra".parse::<Algorithm>().is_err());
    }

    #[test]
    fn wra_cma_solves_one_dimensional_f5() {
        let p = f5(1, 1.0);
        let params = WraParams::default();
        let opts = OuterOptions::default();
        for seed in 0..20 {
            let r = run_wra(&p, &params, &opts, 100_000, seed).unwrap();
            assert!(r.success, "seed {seed}: best gap {}", r.best_gap);
            assert_eq!(r.stop_reason, StopReason::TargetReached);
            assert!(r.fcalls_to_success.unwrap() <= 100_000);
        }
    }

    #[test]
    fn budget_below_one_warm_start_runs_nothing() {
        let p = f5(4, 1.0);
        let r = run_wra(&p, &WraParams::default(), &OuterOptions::default(), 50, 3).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.fcalls, 0);
        assert!(r.trace.is_empty());
        assert_eq!(r.stop_reason, StopReason::BudgetExhausted);
        assert!(!r.success);
    }

    #[test]
    fn fixed_seed_reproduces_every_algorithm() {
        let p = f5(3, 2.0);
        let cfg = AlgorithmConfig::default();
        for a in Algorithm::ALL {
            let r1 = run_trial(&p, a, &cfg, 20_000, 9).unwrap();
            let r2 = run_trial(&p, a, &cfg, 20_000, 9).unwrap();
            assert!(same_run(&r1, &r2), "{a}");
            let r3 = run_trial(&p, a, &cfg, 20_000, 10).unwrap();
            assert!(!same_run(&r1, &r3), "{a}: different seeds gave the same run");
        }
    }

    #[test]
    fn budget_is_respected_up_to_one_round() {
        let problems = [
            f5(5, 1.0),
            ProblemSpec::new(ProblemId::F8, 5, 1.0).build().unwrap(),
            ProblemSpec::new(ProblemId::F1, 4, 1.0).build().unwrap(),
        ];
        let mut cfg = AlgorithmConfig::default();
        cfg.outer.stop_at_success = false;
        for p in &problems {
            let lambda_x = crate::cmaes::default_population_size(p.dx()) as u64;
            let lambda_y = crate::cmaes::default_population_size(p.dy()) as u64;
            for a in Algorithm::ALL {
                for budget in [500u64, 3_000, 17_000] {
                    let r = run_trial(p, a, &cfg, budget, 1).unwrap();
                    assert!(r.fcalls <= budget + lambda_x * lambda_y, "{a} {}: {} > {budget}", p.id(), r.fcalls);
                    for w in r.trace.windows(2) {
                        assert!(w[0].fcalls < w[1].fcalls);
                    }
                    if let Some(last) = r.trace.last() {
                        assert!(last.fcalls <= r.fcalls);
                    }
                }
            }
        }
    }

    #[test]
    fn bounded_iterates_stay_in_the_box() {
        let p = ProblemSpec::new(ProblemId::F7, 4, 10.0).build().unwrap();
        let cfg = AlgorithmConfig::default();
        for a in Algorithm::ALL {
            let r = run_trial(&p, a, &cfg, 30_000, 5).unwrap();
            assert!(p.x_domain().contains(&r.final_x), "{a}: {:?}", r.final_x);
        }
    }

    #[test]
    fn best_gap_is_the_trace_minimum() {
        let p = f5(3, 1.0);
        let r = run_trial(&p, Algorithm::WraCma, &AlgorithmConfig::default(), 50_000, 2).unwrap();
        let min = r.trace.iter().map(|t| t.gap).fold(f64::INFINITY, f64::min);
        assert!(r.best_gap <= min);
        let mut running = f64::INFINITY;
        for t in &r.trace {
            let next = running.min(t.gap);
            assert!(next <= running);
            running = next;
        }
    }

    fn enumerate_pick(xs: &[Vec<f64>], ys: &[Vec<f64>], f: impl Fn(&[f64], &[f64]) -> f64) -> usize {
        let worst: Vec<f64> = xs
            .iter()
            .map(|x| ys.iter().map(|y| f(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut best = 0;
        for (i, w) in worst.iter().enumerate() {
            if *w < worst[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn archive_pick_matches_enumeration() {
        let p = f5(2, 1.0);
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let mut archive = RestartArchive::default();
            for _ in 0..2 {
                let xs: Vec<_> = (0..4).map(|_| p.x_domain().sample_uniform(&mut rng)).collect();
                let ys: Vec<_> = (0..5).map(|_| p.y_domain().sample_uniform(&mut rng)).collect();
                archive.push(&xs, &ys);
            }
            let counter = FcallCounter::new();
            let eval = Evaluator::new(&p, &counter);
            let (i, v) = archive.select(&eval).unwrap();
            let want = enumerate_pick(&archive.x_star, &archive.y_star, |x, y| p.value(x, y));
            assert_eq!(i, want);
            let direct = archive.y_star.iter().map(|y| p.value(&archive.x_star[i], y)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(v, direct);
            assert_eq!(counter.count(), 8 * 10);
        }
    }

    #[test]
    fn extra_scenarios_never_lower_the_estimate() {
        let p = f5(3, 1.0);
        let mut rng = Rng::new(8);
        let xs: Vec<_> = (0..6).map(|_| p.x_domain().sample_uniform(&mut rng)).collect();
        let ys: Vec<_> = (0..3).map(|_| p.y_domain().sample_uniform(&mut rng)).collect();
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&p, &counter);
        let mut prev = f64::NEG_INFINITY;
        for r in [0usize, 1, 4, 16, 64] {
            let mut archive = RestartArchive::default();
            archive.push(&xs, &ys);
            archive.add_random_scenarios(p.y_domain(), r, &mut Rng::new(99));
            let pick = archive.select(&eval).unwrap().0;
            // the superset max at the chosen design
            let estimate = archive.y_star.iter().map(|y| p.value(&xs[pick], y)).fold(f64::NEG_INFINITY, f64::max);
            assert!(estimate >= prev, "r={r}: {estimate} < {prev}");
            prev = estimate;
        }
    }

    #[test]
    fn run_without_internal_termination_archives_once() {
        let p = f5(3, 1.0);
        let mut cfg = AlgorithmConfig::default();
        cfg.restart.enabled = true;
        let (r, archive) = run_wra_restarts(&p, &cfg, SolverKind::InnerCma, 5_000, 1).unwrap();
        assert_eq!(r.restarts, 0);
        let lambda = crate::cmaes::default_population_size(3);
        assert_eq!(archive.x_star.len(), lambda + 1);
        assert_eq!(archive.y_star.len(), cfg.wra.pool_size);
        assert!(r.certification_fcalls > 0);
        assert!(r.fcalls <= 5_000 + 100);
    }

    #[test]
    fn restarts_happen_after_internal_termination() {
        let p = f5(2, 1.0);
        let mut cfg = AlgorithmConfig::default();
        cfg.restart.enabled = true;
        cfg.outer.stop_at_success = false;
        cfg.outer.v_min_x = 1e-3;
        let (r, archive) = run_wra_restarts(&p, &cfg, SolverKind::Aga, 200_000, 3).unwrap();
        assert!(r.restarts >= 1, "{:?}", r.stop_reason);
        assert_eq!(archive.y_star.len(), (r.restarts as usize + 1) * cfg.wra.pool_size);
        assert!(r.trace.iter().any(|t| t.restarts == r.restarts));
    }

    #[test]
    fn surrogate_dominates_its_scenarios() {
        let p = f5(3, 1.0);
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&p, &counter);
        let mut rng = Rng::new(2);
        let extra: Vec<_> = (0..4).map(|_| p.y_domain().sample_uniform(&mut rng)).collect();
        for _ in 0..20 {
            let x = p.x_domain().sample_uniform(&mut rng);
            let y = p.y_domain().sample_uniform(&mut rng);
            let before = counter.count();
            let s = surrogate_value(&eval, &extra, &x, &y);
            assert_eq!(counter.count() - before, 5);
            assert!(s >= p.value(&x, &y));
            for e in &extra {
                assert!(s >= p.value(&x, e));
            }
        }
    }

    #[test]
    fn hybrid_with_no_budget_left_is_empty() {
        let p = f5(3, 1.0);
        let cfg = AlgorithmConfig::default();
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&p, &counter).with_limit(2_000);
        let mut monitor = Monitor::new(&p, 1e-6, 2_000).unwrap();
        let mut session = WraSession::new(&p, &cfg.wra, &cfg.outer, Rng::new(1)).unwrap();
        let mut rng = Rng::new(2);
        assert!(local_search_hybrid(&session, &eval, &cfg.adv, &cfg.outer, &mut monitor, 0, &mut rng).is_none());
        while !eval.exhausted() {
            session.step(&eval).unwrap();
        }
        assert!(local_search_hybrid(&session, &eval, &cfg.adv, &cfg.outer, &mut monitor, 0, &mut rng).is_none());
    }

    #[test]
    fn hybrid_on_a_single_exact_scenario_improves() {
        // pool = {ŷ(x)} for one design, so the surrogate is a two-scenario max
        let p = f5(2, 1.0);
        let mut cfg = AlgorithmConfig::default();
        cfg.wra.pool_size = 1;
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&p, &counter).with_limit(200_000);
        let mut monitor = Monitor::new(&p, 1e-6, 200_000).unwrap();
        let mut session = WraSession::new(&p, &cfg.wra, &cfg.outer, Rng::new(5)).unwrap();
        for _ in 0..3 {
            session.step(&eval).unwrap();
        }
        let start_gap = session
            .last_candidates()
            .iter()
            .map(|x| monitor.gap(x))
            .fold(f64::INFINITY, f64::min);
        let mut rng = Rng::new(6);
        let (_, state) = local_search_hybrid(&session, &eval, &cfg.adv, &cfg.outer, &mut monitor, 0, &mut rng).unwrap();
        let trace = monitor.trace();
        assert!(!trace.is_empty());
        let best = trace.iter().map(|t| t.gap).fold(f64::INFINITY, f64::min);
        assert!(best <= start_gap, "{best} > {start_gap}");
        assert!(p.x_domain().contains(&state.x));
    }

    #[test]
    fn adversarial_cma_restarts_on_a_constant_objective() {
        let d = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let flat = FnObjective::new(|_: &[f64], _: &[f64]| 1.0, d.clone(), d, true);
        // the monitor only needs matching dimensions
        let p = f5(2, 1.0);
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&flat, &counter).with_limit(10_000_000);
        let mut monitor = Monitor::new(&p, 1e-6, 10_000_000).unwrap();
        let cfg = AdvCmaConfig::default();
        let mut rng = Rng::new(3);
        let mut state = AdvState::fresh(&flat, &|x, y| eval.eval(x, y), cfg.eta0, &mut rng);
        let stop = adv_segment(&mut state, &eval, &[], &cfg, &OuterOptions::default(), &mut monitor, 0, &mut rng);
        assert_eq!(stop, StopReason::LocalConverged);
        assert!(monitor.iterations() <= 200, "{}", monitor.iterations());
    }

    #[test]
    fn adversarial_cma_solves_one_dimensional_f5() {
        let p = ProblemSpec::new(ProblemId::F5, 1, 1.0).unbounded().build().unwrap();
        let cfg = AlgorithmConfig::default();
        let wins = (0..20)
            .filter(|&s| {
                let r = run_trial(&p, Algorithm::AdvCma, &cfg, 1_000_000, s).unwrap();
                r.success
            })
            .count();
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn zo_estimator_is_unbiased_on_linear_functions() {
        let a = [1.0, -2.0, 0.5, 3.0, -0.25];
        let mut f = |v: &[f64]| v.iter().zip(&a).map(|(x, c)| x * c).sum::<f64>();
        let mut rng = Rng::new(12);
        let mut mean = [0.0; 5];
        let reps = 200;
        for _ in 0..reps {
            let (g, _) = zo_gradient(&mut f, &[0.3; 5], 50, 1e-3, &mut rng);
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / reps as f64;
            }
        }
        let norm = a.iter().map(|c| c * c).sum::<f64>().sqrt();
        for (m, c) in mean.iter().zip(&a) {
            // 15% of the coordinate, or of the gradient norm for the small ones
            assert!((m - c).abs() <= 0.15 * c.abs().max(0.15 * norm), "{m} vs {c}");
        }
    }

    #[test]
    fn zo_estimator_on_constant_and_quadratic() {
        let mut rng = Rng::new(1);
        let (g, base) = zo_gradient(&mut |_| 7.0, &[1.0, 2.0, 3.0], 5, 1e-3, &mut rng);
        assert_eq!(base, 7.0);
        assert!(g.iter().all(|&v| v == 0.0));
        // at the minimum of |v|^2 each difference is mu^2, so |g| <= d * mu
        for mu in [1e-2, 1e-3, 1e-4] {
            let (g, _) = zo_gradient(&mut |v| v.iter().map(|x| x * x).sum(), &[0.0; 4], 5, mu, &mut rng);
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 4.0 * mu * (1.0 + 1e-9), "mu {mu}: {n}");
        }
    }

    #[test]
    fn zo_gradient_costs_q_plus_one() {
        let p = f5(3, 1.0);
        let counter = FcallCounter::new();
        let eval = Evaluator::new(&p, &counter);
        let mut rng = Rng::new(1);
        zo_gradient(&mut |v| eval.eval(v, &[0.0; 3]), &[0.1; 3], 5, 1e-3, &mut rng);
        assert_eq!(counter.count(), 6);
    }

    #[test]
    fn zopgda_tracks_exact_pgda_on_a_bilinear_game() {
        // with a huge q the estimate concentrates on the true gradient
        let p = ProblemSpec::new(ProblemId::F5, 2, 1.0).unbounded().build().unwrap();
        let cfg = ZoPgdaConfig {
            q: 4000,
            ..ZoPgdaConfig::default()
        };
        let mut opts = OuterOptions::default();
        opts.stop_at_success = false;
        let iters = 20u64;
        let r = run_zopgda(&p, &cfg, &opts, iters * 2 * 4001, 4).unwrap();
        let mut rng = Rng::new(4);
        let mut x = p.x_domain().sample_uniform(&mut rng);
        let mut y = p.y_domain().sample_uniform(&mut rng);
        for _ in 0..iters {
            // f5: grad_x = x + y, grad_y = x - y (B = I)
            let gx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let gy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            for (xi, g) in x.iter_mut().zip(&gx) {
                *xi -= cfg.eta_x * g;
            }
            for (yi, g) in y.iter_mut().zip(&gy) {
                *yi += cfg.eta_y * g;
            }
        }
        assert_eq!(r.iterations, iters);
        for (a, b) in r.final_x.iter().zip(&x) {
            assert!((a - b).abs() < 0.05 * (1.0 + b.abs()), "{:?} vs {:?}", r.final_x, x);
        }
    }

    #[test]
    fn zopgda_non_finite_iterates_stop_the_run() {
        let p = f5(2, 1.0).spec().clone().unbounded().build().unwrap();
        let cfg = ZoPgdaConfig {
            eta_x: 1e200,
            eta_y: 1e200,
            ..ZoPgdaConfig::default()
        };
        let r = run_zopgda(&p, &cfg, &OuterOptions::default(), 100_000, 1).unwrap();
        assert_eq!(r.stop_reason, StopReason::Diverged);
        assert!(!r.success);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = f5(2, 1.0);
        let mut cfg = AlgorithmConfig::default();
        cfg.zo.q = 0;
        assert!(matches!(run_trial(&p, Algorithm::ZoPgda, &cfg, 100, 0), Err(DriverError::InvalidInput(_))));
        let mut cfg = AlgorithmConfig::default();
        cfg.adv.eta_min = 2.0;
        assert!(matches!(run_trial(&p, Algorithm::AdvCma, &cfg, 100, 0), Err(DriverError::InvalidInput(_))));
        assert!(run_zopgda(&p, &ZoPgdaConfig::default(), &OuterOptions::default(), 0, 0).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = AlgorithmConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: AlgorithmConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<AlgorithmConfig>(r#"{"outer": {"nope": 1}}"#).is_err());
    }
}
