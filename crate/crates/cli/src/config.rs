//! Experiment configuration files (TOML). See `experiment.example.toml` at the
//! crate root for an annotated example.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wra::drivers::{Algorithm, AlgorithmConfig};
use wra::problems::{ProblemError, ProblemSpec};

use crate::output::fmt_f64;
use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: Format::Csv,
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Values swept by `bench`. An absent axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    /// Sets `dx = dy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_threshold: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_plus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_minus: Option<Vec<f64>>,
}

impl Sweep {
    pub fn is_empty(&self) -> bool {
        self == &Sweep::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub params: AlgorithmConfig,
    #[serde(default, skip_serializing_if = "Sweep::is_empty")]
    pub sweep: Sweep,
}

fn default_budget() -> u64 {
    10_000_000
}

fn default_trials() -> usize {
    20
}

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    /// Directory-safe label naming the swept values, `base` without sweeps.
    pub key: String,
    pub problem: ProblemSpec,
    pub params: AlgorithmConfig,
}

impl ExperimentConfig {
    /// Parses and validates `text`. Errors carry the 1-based line they refer to
    /// when one can be found.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
            unsupported: false,
        })?;
        cfg.validate().map_err(|(key, e)| {
            let (message, unsupported) = match e {
                CliError::Unsupported(m) => (m, true),
                other => (other.to_string(), false),
            };
            ConfigError {
                line: key.and_then(|k| find_key(text, k)),
                message,
                unsupported,
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.into_cli(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), (Option<&'static str>, CliError)> {
        let invalid = |key, msg: &str| Err((Some(key), CliError::Invalid(msg.into())));
        if self.algorithms.is_empty() {
            return invalid("algorithms", "algorithms must list at least one algorithm");
        }
        if self.n_trials == 0 {
            return invalid("n_trials", "n_trials must be at least 1");
        }
        if self.budget == 0 {
            return invalid("budget", "budget must be positive");
        }
        let s = &self.sweep;
        let axes = [
            ("b", s.b.as_ref().map(Vec::len)),
            ("dims", s.dims.as_ref().map(Vec::len)),
            ("pool_size", s.pool_size.as_ref().map(Vec::len)),
            ("c_max", s.c_max.as_ref().map(Vec::len)),
            ("tau_threshold", s.tau_threshold.as_ref().map(Vec::len)),
            ("p_plus", s.p_plus.as_ref().map(Vec::len)),
            ("p_minus", s.p_minus.as_ref().map(Vec::len)),
        ];
        for (name, len) in axes {
            if len == Some(0) {
                return invalid(name, &format!("sweep axis `{name}` is empty"));
            }
        }
        for p in self.points() {
            p.params
                .validate()
                .map_err(|m| (None, CliError::Invalid(format!("{}: {m}", p.key))))?;
            p.problem.build().map_err(|e| {
                let e = match e {
                    ProblemError::InvalidInput(m) => CliError::Invalid(format!("{}: {m}", p.key)),
                    ProblemError::Unsupported(m) => CliError::Unsupported(format!("{}: {m}", p.key)),
                };
                (Some("problem"), e)
            })?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, in axis declaration order with
    /// the last axis varying fastest.
    pub fn points(&self) -> Vec<Point> {
        let mut pts = vec![(self.problem.clone(), self.params.clone(), Vec::<String>::new())];
        fn expand<T: Clone>(
            pts: Vec<(ProblemSpec, AlgorithmConfig, Vec<String>)>,
            axis: &Option<Vec<T>>,
            label: impl Fn(&T) -> String,
            apply: impl Fn(&mut ProblemSpec, &mut AlgorithmConfig, &T),
        ) -> Vec<(ProblemSpec, AlgorithmConfig, Vec<String>)> {
            let Some(values) = axis else { return pts };
            let mut out = Vec::with_capacity(pts.len() * values.len());
            for (pr, pa, labels) in pts {
                for v in values {
                    let (mut pr, mut pa, mut labels) = (pr.clone(), pa.clone(), labels.clone());
                    apply(&mut pr, &mut pa, v);
                    labels.push(label(v));
                    out.push((pr, pa, labels));
                }
            }
            out
        }
        let s = &self.sweep;
        pts = expand(pts, &s.b, |v| format!("b{}", fmt_f64(*v)), |pr, _, v| pr.b = *v);
        pts = expand(
            pts,
            &s.dims,
            |v| format!("d{v}"),
            |pr, _, v| {
                pr.dx = *v;
                pr.dy = *v;
            },
        );
        pts = expand(pts, &s.pool_size, |v| format!("n{v}"), |_, pa, v| pa.wra.pool_size = *v);
        pts = expand(pts, &s.c_max, |v| format!("c{v}"), |_, pa, v| pa.wra.inner.c_max = *v);
        pts = expand(
            pts,
            &s.tau_threshold,
            |v| format!("tau{}", fmt_f64(*v)),
            |_, pa, v| pa.wra.tau_threshold = *v,
        );
        pts = expand(pts, &s.p_plus, |v| format!("pp{}", fmt_f64(*v)), |_, pa, v| pa.wra.p_plus = *v);
        pts = expand(pts, &s.p_minus, |v| format!("pm{}", fmt_f64(*v)), |_, pa, v| pa.wra.p_minus = *v);
        pts.into_iter()
            .map(|(problem, params, labels)| Point {
                key: if labels.is_empty() {
                    "base".into()
                } else {
                    labels.join("_")
                },
                problem,
                params,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
    pub unsupported: bool,
}

impl ConfigError {
    pub fn into_cli(self, path: &Path) -> CliError {
        let loc = match self.line {
            Some(l) => format!("{}:{l}", path.display()),
            None => path.display().to_string(),
        };
        let msg = format!("{loc}: {}", self.message);
        if self.unsupported {
            CliError::Unsupported(msg)
        } else {
            CliError::Invalid(msg)
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key` or opening a table named `key`.
fn find_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let assigns = l
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='));
        assigns || l.trim_end() == format!("[{key}]")
    })
    .map(|i| i + 1)
}
