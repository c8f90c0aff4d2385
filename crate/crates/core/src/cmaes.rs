//! Population-based CMA-ES with ask/tell, box mirroring and coordinate-wise
//! standard-deviation capping.
//!
//! The optimizer only ever sees rankings, never objective values; a maximizer
//! is obtained by ranking candidates in descending order.

use thiserror::Error;

use crate::numerics::{eigh, eigh_with_guess, NumericsError, Rng, SymEigen, SymMatrix};
use crate::problems::BoxDomain;

/// Eigenvalues are kept at or above this fraction of the largest one.
const EIGEN_FLOOR: f64 = 1e-30;
/// A cold decomposition every this many updates bounds drift of the warm start.
const COLD_EIGEN_PERIOD: u64 = 50;
const SIGMA_MIN: f64 = 1e-300;
const SIGMA_MAX: f64 = 1e300;
/// Coordinate stddevs are capped at this fraction of the box width: beyond it
/// mirrored samples are close to uniform and ranking carries no signal.
pub const STDDEV_CAP_FRACTION: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminationReason {
    StdDevConverged,
    IllConditioned,
}

/// Default population size `floor(4 + 3 ln n)`.
pub fn default_population_size(dim: usize) -> usize {
    (4.0 + 3.0 * (dim as f64).ln()).floor() as usize
}

/// Strategy parameters with the usual defaults for a given dimension and population size.
#[derive(Clone, Debug, PartialEq)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(dim: usize, lambda: usize) -> Self {
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Reflects `x` into `[lower, upper]` coordinate-wise, treating the box as one
/// half of a period-`2 (upper - lower)` reflection pattern.
pub fn mirror_into_box(x: &[f64], domain: &BoxDomain) -> Vec<f64> {
    let mut out = x.to_vec();
    mirror_in_place(&mut out, domain);
    out
}

pub fn mirror_in_place(x: &mut [f64], domain: &BoxDomain) {
    for (i, v) in x.iter_mut().enumerate() {
        *v = mirror_scalar(*v, domain.lower()[i], domain.upper()[i]);
    }
}

#[inline]
fn mirror_scalar(v: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&v) {
        return v;
    }
    if !v.is_finite() {
        return if v > hi { hi } else { lo };
    }
    let w = hi - lo;
    let r = (v - lo).rem_euclid(2.0 * w);
    let out = if r <= w { lo + r } else { hi - (r - w) };
    out.clamp(lo, hi)
}

/// Argsort of `values` for minimization: best first, ties by index, NaN last.
pub fn rank_ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    idx.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])).then(a.cmp(&b)));
    idx
}

/// Argsort of `values` for maximization: largest first, ties by index, NaN last.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    idx.sort_by(|&a, &b| key(values[b]).total_cmp(&key(values[a])).then(a.cmp(&b)));
    idx
}

/// Samples of the last `ask`, kept until the matching `tell`.
#[derive(Clone, Debug)]
struct Pending {
    /// Standard normal draws, one row per candidate.
    z: Vec<Vec<f64>>,
    /// Pre-mirror samples `m + sigma * B D z`.
    raw: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PopulationCma {
    dim: usize,
    mean: Vec<f64>,
    cov: SymMatrix,
    sigma: f64,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,
    iteration: u64,
    params: CmaParams,
    domain: Option<BoxDomain>,
    eig: SymEigen,
    sqrt_values: Vec<f64>,
    eig_updates: u64,
    pending: Option<Pending>,
}

enum Start<'a> {
    Hint(Option<&'a SymEigen>),
    Exact(SymEigen),
}

impl PopulationCma {
    /// Starts at `mean0` with covariance `cov0` and unit step size.
    pub fn new(
        mean0: Vec<f64>,
        cov0: SymMatrix,
        domain: Option<BoxDomain>,
        lambda: Option<usize>,
    ) -> Result<Self, CmaError> {
        Self::with_basis_hint(mean0, cov0, domain, lambda, None)
    }

    /// Like [`PopulationCma::new`], warm-starting the decomposition of `cov0`
    /// from the eigenbasis of a nearby matrix.
    pub fn with_basis_hint(
        mean0: Vec<f64>,
        cov0: SymMatrix,
        domain: Option<BoxDomain>,
        lambda: Option<usize>,
        hint: Option<&SymEigen>,
    ) -> Result<Self, CmaError> {
        Self::build(mean0, cov0, domain, lambda, Start::Hint(hint))
    }

    /// Like [`PopulationCma::new`], trusting `eig` as the decomposition of `cov0`.
    pub fn with_decomposition(
        mean0: Vec<f64>,
        cov0: SymMatrix,
        domain: Option<BoxDomain>,
        lambda: Option<usize>,
        eig: SymEigen,
    ) -> Result<Self, CmaError> {
        Self::build(mean0, cov0, domain, lambda, Start::Exact(eig))
    }

    fn build(
        mean0: Vec<f64>,
        cov0: SymMatrix,
        domain: Option<BoxDomain>,
        lambda: Option<usize>,
        decomposition: Start<'_>,
    ) -> Result<Self, CmaError> {
        let dim = mean0.len();
        if dim == 0 || cov0.dim() != dim {
            return Err(CmaError::InvalidInput(
                "mean and covariance dimensions disagree".into(),
            ));
        }
        if let Some(d) = &domain {
            if d.dim() != dim {
                return Err(CmaError::InvalidInput("domain dimension mismatch".into()));
            }
        }
        if mean0.iter().any(|v| !v.is_finite()) {
            return Err(CmaError::InvalidInput("mean must be finite".into()));
        }
        let lambda = lambda.unwrap_or_else(|| default_population_size(dim).max(2));
        if lambda < 2 {
            return Err(CmaError::InvalidInput("population size must be at least 2".into()));
        }
        let eig = match decomposition {
            Start::Exact(e) if e.dim() == dim => Ok(e),
            Start::Hint(Some(h)) if h.dim() == dim => eigh_with_guess(&cov0, h),
            _ => eigh(&cov0),
        }
        .map_err(|_| CmaError::InvalidInput("covariance has non-finite entries".into()))?;
        if eig.min_value() <= 0.0 {
            return Err(CmaError::InvalidInput("covariance must be positive definite".into()));
        }
        let sqrt_values = eig.values.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            dim,
            mean: mean0,
            cov: cov0,
            sigma: 1.0,
            p_sigma: vec![0.0; dim],
            p_c: vec![0.0; dim],
            iteration: 0,
            params: CmaParams::new(dim, lambda),
            domain,
            eig,
            sqrt_values,
            eig_updates: 0,
            pending: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn params(&self) -> &CmaParams {
        &self.params
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// The mean mirrored into the domain, i.e. the point the distribution is centred on in the box.
    pub fn effective_mean(&self) -> Vec<f64> {
        match &self.domain {
            Some(d) => mirror_into_box(&self.mean, d),
            None => self.mean.clone(),
        }
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn step_size(&self) -> f64 {
        self.sigma
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn domain(&self) -> Option<&BoxDomain> {
        self.domain.as_ref()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eig
    }

    /// `sigma^2 C`, the covariance actually sampled from.
    pub fn sampling_cov(&self) -> SymMatrix {
        self.cov.scaled(self.sigma * self.sigma)
    }

    /// `sigma * sqrt(C_ii)` for every coordinate.
    pub fn coordinate_stddevs(&self) -> Vec<f64> {
        self.cov.diag().iter().map(|c| self.sigma * c.max(0.0).sqrt()).collect()
    }

    pub fn max_coordinate_stddev(&self) -> f64 {
        self.coordinate_stddevs().into_iter().fold(0.0, f64::max)
    }

    pub fn condition_number(&self) -> f64 {
        let lo = self.eig.min_value();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            self.eig.max_value() / lo
        }
    }

    /// Replaces the covariance, keeping step size and paths.
    pub fn set_cov(&mut self, cov: SymMatrix) -> Result<(), CmaError> {
        if cov.dim() != self.dim {
            return Err(CmaError::InvalidInput("covariance dimension mismatch".into()));
        }
        self.cov = cov;
        self.refresh_eigen(true)
    }

    /// Sets `sigma^2 C := sampling_cov` with unit step size.
    pub fn set_sampling_cov(&mut self, cov: SymMatrix) -> Result<(), CmaError> {
        self.sigma = 1.0;
        self.set_cov(cov)
    }

    /// Replaces `C` by `D C D`.
    pub fn scale_cov_sym(&mut self, d: &[f64]) -> Result<(), CmaError> {
        self.cov.scale_sym(d);
        self.refresh_eigen(false)
    }

    /// Draws `lambda` candidates, mirrored into the domain when one is set.
    ///
    /// Consumes exactly `lambda * dim` normal variates.
    pub fn ask(&mut self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let n = self.dim;
        let lambda = self.params.lambda;
        let v = self.eig.vectors_row_major();
        let mut zs = Vec::with_capacity(lambda);
        let mut raws = Vec::with_capacity(lambda);
        let mut out = Vec::with_capacity(lambda);
        let mut dz = vec![0.0; n];
        for _ in 0..lambda {
            let z = rng.normal_vec(n);
            for ((d, zi), s) in dz.iter_mut().zip(&z).zip(&self.sqrt_values) {
                *d = s * zi;
            }
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let row = &v[i * n..(i + 1) * n];
                    self.mean[i] + self.sigma * row.iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let cand = match &self.domain {
                Some(d) => mirror_into_box(&raw, d),
                None => raw.clone(),
            };
            zs.push(z);
            raws.push(raw);
            out.push(cand);
        }
        self.pending = Some(Pending { z: zs, raw: raws });
        out
    }

    /// Updates the distribution from `rankings`, where `rankings[0]` is the
    /// index of the best candidate of the last `ask`.
    pub fn tell(&mut self, rankings: &[usize]) -> Result<(), CmaError> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| CmaError::ProtocolViolation("tell without a pending ask".into()))?;
        let lambda = self.params.lambda;
        let mut seen = vec![false; lambda];
        let valid = rankings.len() == lambda
            && rankings.iter().all(|&r| r < lambda && !std::mem::replace(&mut seen[r], true));
        if !valid {
            self.pending = Some(pending);
            return Err(CmaError::ProtocolViolation(format!(
                "rankings must be a permutation of 0..{lambda}"
            )));
        }
        let n = self.dim;
        let p = &self.params;
        let mut y_w = vec![0.0; n];
        let mut z_w = vec![0.0; n];
        let ys: Vec<Vec<f64>> = rankings[..p.mu]
            .iter()
            .map(|&r| {
                pending.raw[r]
                    .iter()
                    .zip(&self.mean)
                    .map(|(x, m)| (x - m) / self.sigma)
                    .collect()
            })
            .collect();
        for (k, (&r, y)) in rankings[..p.mu].iter().zip(&ys).enumerate() {
            let w = p.weights[k];
            for i in 0..n {
                y_w[i] += w * y[i];
                z_w[i] += w * pending.z[r][i];
            }
        }
        for i in 0..n {
            self.mean[i] += self.sigma * y_w[i];
        }

        // C^{-1/2} y_w = B z_w
        let v = self.eig.vectors_row_major();
        let bz: Vec<f64> = (0..n)
            .map(|i| v[i * n..(i + 1) * n].iter().zip(&z_w).map(|(a, b)| a * b).sum())
            .collect();
        let cs = p.c_sigma;
        let coef = (cs * (2.0 - cs) * p.mu_eff).sqrt();
        for i in 0..n {
            self.p_sigma[i] = (1.0 - cs) * self.p_sigma[i] + coef * bz[i];
        }
        let ps_norm = self.p_sigma.iter().map(|a| a * a).sum::<f64>().sqrt();
        // expected squared path length relative to stationarity, since the path started at zero
        let gen = (self.iteration + 1) as f64;
        let gamma = 1.0 - (1.0 - cs).powf(2.0 * gen);
        let h_sigma = ps_norm / gamma.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let cc = p.c_c;
        let coef_c = if h_sigma {
            (cc * (2.0 - cc) * p.mu_eff).sqrt()
        } else {
            0.0
        };
        for i in 0..n {
            self.p_c[i] = (1.0 - cc) * self.p_c[i] + coef_c * y_w[i];
        }

        let delta_h = if h_sigma { 0.0 } else { cc * (2.0 - cc) };
        let decay = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
        self.cov.scale(decay);
        self.cov.add_outer(p.c_1, &self.p_c);
        for (k, y) in ys.iter().enumerate() {
            self.cov.add_outer(p.c_mu * p.weights[k], y);
        }
        self.cov.symmetrize();

        let factor = ((cs / p.d_sigma) * (ps_norm / p.chi_n - gamma.sqrt())).min(1e3).exp();
        self.sigma = (self.sigma * factor).clamp(SIGMA_MIN, SIGMA_MAX);
        self.iteration += 1;
        self.refresh_eigen(false)
    }

    /// Shrinks row/column `i` of `C` wherever `sigma * sqrt(C_ii) > caps[i]`,
    /// preserving correlations.
    pub fn cap_coordinate_stddev(&mut self, caps: &[f64]) -> Result<(), CmaError> {
        if caps.len() != self.dim {
            return Err(CmaError::InvalidInput("cap dimension mismatch".into()));
        }
        let sd = self.coordinate_stddevs();
        if sd.iter().zip(caps).all(|(s, c)| s <= c) {
            return Ok(());
        }
        let d: Vec<f64> = sd
            .iter()
            .zip(caps)
            .map(|(s, c)| if s > c { c / s } else { 1.0 })
            .collect();
        self.scale_cov_sym(&d)
    }

    /// Caps each coordinate stddev at a quarter of the box width; no-op without a domain.
    pub fn cap_to_domain(&mut self) -> Result<(), CmaError> {
        let Some(domain) = &self.domain else {
            return Ok(());
        };
        let caps: Vec<f64> = domain.widths().iter().map(|w| w * STDDEV_CAP_FRACTION).collect();
        self.cap_coordinate_stddev(&caps)
    }

    pub fn should_terminate(&self, v_min: f64, cond_max: f64) -> Option<TerminationReason> {
        if self.max_coordinate_stddev() < v_min {
            Some(TerminationReason::StdDevConverged)
        } else if self.condition_number() > cond_max {
            Some(TerminationReason::IllConditioned)
        } else {
            None
        }
    }

    fn refresh_eigen(&mut self, cold: bool) -> Result<(), CmaError> {
        self.eig_updates += 1;
        let cold = cold || self.eig_updates % COLD_EIGEN_PERIOD == 0;
        let mut eig = if cold {
            eigh(&self.cov)?
        } else {
            eigh_with_guess(&self.cov, &self.eig)?
        };
        let top = eig.max_value();
        if !(top > 0.0) {
            return Err(CmaError::Numerics(NumericsError::NotPositiveDefinite));
        }
        if eig.floor_values(EIGEN_FLOOR * top) {
            self.cov = eig.reconstruct();
        }
        self.sqrt_values = eig.values.iter().map(|v| v.sqrt()).collect();
        self.eig = eig;
        Ok(())
    }
}
