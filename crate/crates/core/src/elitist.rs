//! (1+1)-CMA-ES: one offspring per step, success-rule step size and
//! success-triggered rank-one covariance adaptation.

use crate::cmaes::mirror_in_place;
use crate::numerics::{Rng, SymMatrix};
use crate::problems::BoxDomain;

const SIGMA_MIN: f64 = 1e-300;
const SIGMA_MAX: f64 = 1e300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Strictly better.
    #[inline]
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Minimize => a < b,
            Sense::Maximize => a > b,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElitistParams {
    pub damping: f64,
    pub p_target: f64,
    pub c_p: f64,
    pub c_c: f64,
    pub c_cov: f64,
    pub p_thresh: f64,
}

impl ElitistParams {
    pub fn new(dim: usize) -> Self {
        let n = dim as f64;
        Self {
            damping: 1.0 + n / 2.0,
            p_target: 2.0 / 11.0,
            c_p: 1.0 / 12.0,
            c_c: 2.0 / (n + 2.0),
            c_cov: 2.0 / (n * n + 6.0),
            p_thresh: 0.44,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElitistCma {
    incumbent: Vec<f64>,
    value: f64,
    cov: SymMatrix,
    chol: Vec<f64>,
    sigma: f64,
    p_succ: f64,
    path: Vec<f64>,
    domain: Option<BoxDomain>,
    sense: Sense,
    params: ElitistParams,
}

impl ElitistCma {
    /// Starts from an already evaluated point with covariance `sigma0^2 I`.
    pub fn new(x0: Vec<f64>, value0: f64, sigma0: f64, domain: Option<BoxDomain>, sense: Sense) -> Self {
        let n = x0.len();
        let params = ElitistParams::new(n);
        let mut x0 = x0;
        if let Some(d) = &domain {
            mirror_in_place(&mut x0, d);
        }
        Self {
            incumbent: x0,
            value: value0,
            cov: SymMatrix::identity(n),
            chol: SymMatrix::identity(n).cholesky().expect("identity is positive definite"),
            sigma: sigma0.clamp(SIGMA_MIN, SIGMA_MAX),
            p_succ: params.p_target,
            path: vec![0.0; n],
            domain,
            sense,
            params,
        }
    }

    /// Like [`ElitistCma::new`] but with covariance `sigma0^2 cov0`.
    pub fn with_cov(
        x0: Vec<f64>,
        value0: f64,
        sigma0: f64,
        cov0: SymMatrix,
        domain: Option<BoxDomain>,
        sense: Sense,
    ) -> Option<Self> {
        let chol = cov0.cholesky()?;
        let mut es = Self::new(x0, value0, sigma0, domain, sense);
        es.cov = cov0;
        es.chol = chol;
        Some(es)
    }

    pub fn incumbent(&self) -> &[f64] {
        &self.incumbent
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn step_size(&self) -> f64 {
        self.sigma
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Largest coordinate standard deviation `sigma * sqrt(C_ii)`.
    pub fn max_coordinate_stddev(&self) -> f64 {
        self.cov
            .diag()
            .iter()
            .map(|c| self.sigma * c.max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// Moves the incumbent to a new, already evaluated point; the adapted
    /// step size and covariance are kept.
    pub fn relocate(&mut self, x: Vec<f64>, value: f64) {
        self.incumbent = x;
        if let Some(d) = &self.domain {
            mirror_in_place(&mut self.incumbent, d);
        }
        self.value = value;
    }

    /// The incumbent's value changes when the objective does; re-evaluates it.
    pub fn reset_value(&mut self, value: f64) {
        self.value = value;
    }

    /// One offspring: sample, mirror, evaluate, select. Returns whether it was accepted.
    pub fn step(&mut self, objective: &mut dyn FnMut(&[f64]) -> f64, rng: &mut Rng) -> bool {
        let n = self.incumbent.len();
        let z = rng.normal_vec(n);
        let az: Vec<f64> = (0..n)
            .map(|i| (0..=i).map(|k| self.chol[i * n + k] * z[k]).sum())
            .collect();
        let mut cand: Vec<f64> = self
            .incumbent
            .iter()
            .zip(&az)
            .map(|(x, d)| x + self.sigma * d)
            .collect();
        if let Some(d) = &self.domain {
            mirror_in_place(&mut cand, d);
        }
        let v = objective(&cand);
        let success = self.sense.better(v, self.value);

        let p = &self.params;
        let lambda_succ = if success { 1.0 } else { 0.0 };
        self.p_succ = (1.0 - p.c_p) * self.p_succ + p.c_p * lambda_succ;
        let sigma_old = self.sigma;
        let factor = ((self.p_succ - p.p_target) / (p.damping * (1.0 - p.p_target))).exp();
        self.sigma = (self.sigma * factor).clamp(SIGMA_MIN, SIGMA_MAX);

        if success {
            let step: Vec<f64> = cand
                .iter()
                .zip(&self.incumbent)
                .map(|(c, x)| (c - x) / sigma_old)
                .collect();
            self.incumbent = cand;
            self.value = v;
            self.update_cov(&step);
        }
        success
    }

    fn update_cov(&mut self, step: &[f64]) {
        let p = &self.params;
        let cc = p.c_c;
        if self.p_succ < p.p_thresh {
            let coef = (cc * (2.0 - cc)).sqrt();
            for (pi, s) in self.path.iter_mut().zip(step) {
                *pi = (1.0 - cc) * *pi + coef * s;
            }
            self.cov.rank_one_update(1.0 - p.c_cov, p.c_cov, &self.path);
        } else {
            for pi in self.path.iter_mut() {
                *pi *= 1.0 - cc;
            }
            let a = 1.0 - p.c_cov + p.c_cov * cc * (2.0 - cc);
            self.cov.rank_one_update(a, p.c_cov, &self.path);
        }
        self.cov.symmetrize();
        if let Some(l) = self.cov.cholesky() {
            self.chol = l;
        } else {
            // numerically lost definiteness: restart the shape, keep the scale
            let scale = self.cov.diag().iter().sum::<f64>() / step.len() as f64;
            self.cov = SymMatrix::scaled_identity(step.len(), scale.max(f64::MIN_POSITIVE));
            self.chol = self.cov.cholesky().expect("scaled identity is positive definite");
            self.path.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Best point over `n_starts` independent maximization runs from uniform
/// starts in `domain`.
///
/// Each start costs one evaluation plus at most `budget_per_start` offspring;
/// a run also stops once its step falls below `1e-8` times the widest box side.
/// Start `k` draws from a stream derived from a seed taken from `rng` and `k`.
pub fn multistart_maximize(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    domain: &BoxDomain,
    n_starts: usize,
    budget_per_start: u64,
    rng: &mut Rng,
) -> (Vec<f64>, f64) {
    assert!(n_starts >= 1, "at least one start is required");
    let base = rng.next_u64();
    let width = domain.widths().into_iter().fold(0.0, f64::max);
    let sigma0 = width / 4.0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 0..n_starts {
        let mut r = Rng::derive(base, k as u64);
        let y0 = domain.sample_uniform(&mut r);
        let v0 = objective(&y0);
        let mut es = ElitistCma::new(y0, v0, sigma0, Some(domain.clone()), Sense::Maximize);
        for _ in 0..budget_per_start {
            if es.max_coordinate_stddev() < 1e-8 * width {
                break;
            }
            es.step(objective, &mut r);
        }
        let better = match &best {
            None => true,
            Some((_, b)) => es.value() > *b || b.is_nan(),
        };
        if better {
            best = Some((es.incumbent().to_vec(), es.value()));
        }
    }
    best.expect("n_starts >= 1")
}
