//! Derivative-free min–max optimization with worst-case ranking approximation.

pub mod cmaes;
pub mod drivers;
pub mod elitist;
pub mod evaluation;
pub mod inner;
pub mod numerics;
pub mod objective;
pub mod problems;
pub mod wra;

pub use objective::{Evaluator, FcallCounter, FnObjective, MinMaxObjective};
