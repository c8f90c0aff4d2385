//! Inner maximizers used by WRA to refine a worst-case scenario candidate for
//! one fixed design `x`: a CMA-ES round and approximate gradient ascent (AGA).
//!
//! A solver is split into the inherited configuration `omega` (carried in the
//! scenario pool across WRA calls) and per-call state `theta` (rebuilt every
//! WRA call).

use serde::{Deserialize, Serialize};

use crate::cmaes::{rank_descending, PopulationCma};
use crate::numerics::{Rng, SymEigen, SymMatrix};
use crate::objective::Evaluator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[serde(rename = "cma")]
    InnerCma,
    Aga,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSolverParams {
    /// Improvements per round before handing control back.
    pub c_max: usize,
    pub v_min_y: f64,
    pub t_min: u64,
    pub cond_max_y: f64,
    pub u_min: f64,
    pub beta: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Initial AGA learning rate.
    pub eta0: f64,
}

impl Default for InnerSolverParams {
    fn default() -> Self {
        Self {
            c_max: 1,
            v_min_y: 1e-4,
            t_min: 10,
            cond_max_y: 1e14,
            u_min: 1e-5,
            beta: 0.5,
            fd_step: 1.49e-8,
            eta0: 1.0,
        }
    }
}

impl InnerSolverParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.c_max < 1 {
            return Err("c_max must be at least 1".into());
        }
        if !(self.v_min_y > 0.0 && self.u_min > 0.0 && self.fd_step > 0.0 && self.eta0 > 0.0) {
            return Err("v_min_y, u_min, fd_step and eta0 must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err("beta must lie in (0, 1)".into());
        }
        if !(self.cond_max_y > 1.0) {
            return Err("cond_max_y must exceed 1".into());
        }
        Ok(())
    }
}

/// Inherited inner CMA-ES configuration: mean and covariance with the step size folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerCmaConfig {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    /// Eigendecomposition of `cov` when known, so the inner CMA-ES can be
    /// rebuilt without decomposing again.
    pub basis: Option<SymEigen>,
}

impl InnerCmaConfig {
    pub fn new(mean: Vec<f64>, cov: SymMatrix) -> Self {
        Self { mean, cov, basis: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgaConfig {
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverConfig {
    Cma(InnerCmaConfig),
    Aga(AgaConfig),
}

/// Per-call inner CMA-ES state.
#[derive(Clone, Debug)]
pub struct InnerCmaTheta {
    pub h: bool,
    pub t: u64,
    cma: PopulationCma,
}

impl InnerCmaTheta {
    pub fn new(omega: &InnerCmaConfig, eval: &Evaluator<'_>) -> Self {
        let domain = eval.objective.y_constraint().cloned();
        let mut mean = omega.mean.clone();
        if let Some(d) = &domain {
            crate::cmaes::mirror_in_place(&mut mean, d);
        }
        let cma = match &omega.basis {
            Some(eig) => PopulationCma::with_decomposition(mean, omega.cov.clone(), domain, None, eig.clone()),
            None => PopulationCma::new(mean, omega.cov.clone(), domain, None),
        }
        .expect("pool covariances are positive definite");
        Self { h: false, t: 0, cma }
    }

    pub fn cma(&self) -> &PopulationCma {
        &self.cma
    }
}

#[derive(Clone, Debug)]
pub enum SolverTheta {
    Cma(InnerCmaTheta),
    Aga { h: bool },
}

impl SolverTheta {
    pub fn new(omega: &SolverConfig, eval: &Evaluator<'_>) -> Self {
        match omega {
            SolverConfig::Cma(c) => SolverTheta::Cma(InnerCmaTheta::new(c, eval)),
            SolverConfig::Aga(_) => SolverTheta::Aga { h: false },
        }
    }

    pub fn terminated(&self) -> bool {
        match self {
            SolverTheta::Cma(t) => t.h,
            SolverTheta::Aga { h } => *h,
        }
    }
}

/// Best-so-far scenario for one design.
#[derive(Clone, Debug, PartialEq)]
pub struct Incumbent {
    pub y: Vec<f64>,
    pub value: f64,
}

/// One call of the inner solver: dispatches on the configuration kind.
pub fn inner_round(
    eval: &Evaluator<'_>,
    x: &[f64],
    best: &mut Incumbent,
    omega: &mut SolverConfig,
    theta: &mut SolverTheta,
    params: &InnerSolverParams,
    rng: &mut Rng,
) {
    match (omega, theta) {
        (SolverConfig::Cma(o), SolverTheta::Cma(t)) => cma_inner_round(eval, x, best, o, t, params, rng),
        (SolverConfig::Aga(o), SolverTheta::Aga { h }) => aga_inner_round(eval, x, best, o, h, params),
        _ => panic!("solver configuration and state kinds differ"),
    }
}

/// Inner CMA-ES: iterate until `c_max` strict improvements, termination, or budget exhaustion.
pub fn cma_inner_round(
    eval: &Evaluator<'_>,
    x: &[f64],
    best: &mut Incumbent,
    omega: &mut InnerCmaConfig,
    theta: &mut InnerCmaTheta,
    params: &InnerSolverParams,
    rng: &mut Rng,
) {
    if theta.h {
        return;
    }
    let cov_init = theta.cma.sampling_cov();
    let mut c = 0;
    while c < params.c_max && !theta.h && !eval.exhausted() {
        let cands = theta.cma.ask(rng);
        let values: Vec<f64> = cands.iter().map(|y| eval.eval(x, y)).collect();
        let ranks = rank_descending(&values);
        let top = ranks[0];
        if values[top] > best.value {
            best.value = values[top];
            best.y.clone_from(&cands[top]);
            c += 1;
        }
        theta.cma.tell(&ranks).expect("rankings come from the matching ask");
        theta.cma.cap_to_domain().expect("capping keeps the covariance finite");
        let sd = theta.cma.coordinate_stddevs();
        if sd.iter().fold(0.0f64, |a, &b| a.max(b)) < params.v_min_y && theta.t >= params.t_min {
            let d: Vec<f64> = sd.iter().map(|s| (params.v_min_y / s).max(1.0)).collect();
            theta.cma.scale_cov_sym(&d).expect("flooring keeps the covariance finite");
            theta.h = true;
        }
        if theta.cma.condition_number() > params.cond_max_y {
            theta.h = true;
            theta.cma.set_sampling_cov(cov_init.clone()).expect("initial covariance is valid");
        }
        theta.t += 1;
    }
    omega.mean = theta.cma.mean().to_vec();
    omega.cov = theta.cma.sampling_cov();
    let s2 = theta.cma.step_size() * theta.cma.step_size();
    omega.basis = Some(theta.cma.eigen().scaled(s2));
}

/// Forward-difference gradient with per-coordinate step `step * max(1, |y_i|)`.
///
/// Costs exactly `y.len()` evaluations; `base` must equal `f(y)`.
pub fn finite_difference_gradient(f: &mut dyn FnMut(&[f64]) -> f64, y: &[f64], base: f64, step: f64) -> Vec<f64> {
    let mut probe = y.to_vec();
    (0..y.len())
        .map(|i| {
            let h = step * y[i].abs().max(1.0);
            probe[i] = y[i] + h;
            // the representable step, not the nominal one
            let dh = probe[i] - y[i];
            let g = (f(&probe) - base) / dh;
            probe[i] = y[i];
            g
        })
        .collect()
}

/// Approximate gradient ascent with backtracking on the learning rate.
pub fn aga_inner_round(
    eval: &Evaluator<'_>,
    x: &[f64],
    best: &mut Incumbent,
    omega: &mut AgaConfig,
    h: &mut bool,
    params: &InnerSolverParams,
) {
    let domain = eval.objective.y_constraint().cloned();
    let propose = |eta: f64, g: &[f64], y: &[f64]| {
        let mut p: Vec<f64> = y.iter().zip(g).map(|(a, b)| a + eta * b).collect();
        if let Some(d) = &domain {
            d.clip(&mut p);
        }
        p
    };
    let mut c = 0;
    while c < params.c_max && !*h && !eval.exhausted() {
        let g = finite_difference_gradient(&mut |y| eval.eval(x, y), &best.y, best.value, params.fd_step);
        if g.iter().any(|v| !v.is_finite()) {
            *h = true;
            break;
        }
        let mut y_new = propose(omega.eta, &g, &best.y);
        let mut f_new = eval.eval(x, &y_new);
        if f_new > best.value {
            omega.eta /= params.beta;
        } else {
            while !(f_new > best.value) && !*h && !eval.exhausted() {
                omega.eta *= params.beta;
                y_new = propose(omega.eta, &g, &best.y);
                // the step actually taken after projection: at a maximizing
                // vertex it is zero and further shrinking of eta is pointless
                let moved = y_new.iter().zip(&best.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if moved <= params.u_min {
                    *h = true;
                }
                f_new = eval.eval(x, &y_new);
            }
        }
        if f_new > best.value {
            best.value = f_new;
            best.y = y_new;
            c += 1;
        }
    }
}
