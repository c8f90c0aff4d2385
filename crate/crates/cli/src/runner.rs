//! Trial-level worker pool. Each trial is fully determined by its seed, so
//! results do not depend on the number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use wra::drivers::{run_trial, Algorithm, AlgorithmConfig, DriverError, TrialRecord};
use wra::problems::Problem;

use crate::CliError;

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    master_seed ^ trial as u64
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `n_trials` trials on up to `jobs` threads; results are in trial order.
pub fn run_batch(
    problem: &Problem,
    algorithm: Algorithm,
    params: &AlgorithmConfig,
    budget: u64,
    n_trials: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<TrialRecord>, CliError> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TrialRecord, DriverError>>>> =
        Mutex::new((0..n_trials).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n_trials.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_trials {
                    break;
                }
                let r = run_trial(problem, algorithm, params, budget, trial_seed(master_seed, i));
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| {
            r.expect("every trial ran").map_err(|e| match e {
                DriverError::Problem(p) => p.into(),
                other => CliError::Invalid(other.to_string()),
            })
        })
        .collect()
}
