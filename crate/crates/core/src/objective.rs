//! The black-box interface every solver works against, and f-call accounting.

use std::cell::Cell;

use crate::problems::BoxDomain;

/// A min–max objective `f(x, y)` with box search domains.
///
/// When [`MinMaxObjective::bounded`] is false the domains only describe where
/// initial points are drawn; candidates are never clipped or mirrored.
pub trait MinMaxObjective: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn x_domain(&self) -> &BoxDomain;
    fn y_domain(&self) -> &BoxDomain;
    fn bounded(&self) -> bool;
    fn value(&self, x: &[f64], y: &[f64]) -> f64;

    /// Exact `max_y f(x, y)` when the objective knows it in closed form.
    fn worst_case_oracle(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn x_constraint(&self) -> Option<&BoxDomain> {
        self.bounded().then(|| self.x_domain())
    }

    fn y_constraint(&self) -> Option<&BoxDomain> {
        self.bounded().then(|| self.y_domain())
    }
}

/// Wraps a closure as a [`MinMaxObjective`].
pub struct FnObjective<F> {
    f: F,
    x_domain: BoxDomain,
    y_domain: BoxDomain,
    bounded: bool,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    pub fn new(f: F, x_domain: BoxDomain, y_domain: BoxDomain, bounded: bool) -> Self {
        Self {
            f,
            x_domain,
            y_domain,
            bounded,
        }
    }
}

impl<F> MinMaxObjective for FnObjective<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn dim_x(&self) -> usize {
        self.x_domain.dim()
    }
    fn dim_y(&self) -> usize {
        self.y_domain.dim()
    }
    fn x_domain(&self) -> &BoxDomain {
        &self.x_domain
    }
    fn y_domain(&self) -> &BoxDomain {
        &self.y_domain
    }
    fn bounded(&self) -> bool {
        self.bounded
    }
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.f)(x, y)
    }
}

/// Counts objective evaluations charged to the optimization budget.
#[derive(Debug, Default)]
pub struct FcallCounter {
    count: Cell<u64>,
}

impl FcallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn count(&self) -> u64 {
        self.count.get()
    }

    #[inline]
    pub fn add(&self, n: u64) {
        self.count.set(self.count.get() + n);
    }
}

/// An objective paired with the counter its evaluations are charged to.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub objective: &'a dyn MinMaxObjective,
    pub counter: &'a FcallCounter,
    /// Solvers stop issuing new work once the counter reaches this value.
    pub limit: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(objective: &'a dyn MinMaxObjective, counter: &'a FcallCounter) -> Self {
        Self {
            objective,
            counter,
            limit: u64::MAX,
        }
    }

    pub fn with_limit(mut self, limit: u64) -> Self {
        self.limit = limit;
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.counter.add(1);
        self.objective.value(x, y)
    }

    #[inline]
    pub fn exhausted(&self) -> bool {
        self.counter.count() >= self.limit
    }

    pub fn fcalls(&self) -> u64 {
        self.counter.count()
    }
}
