//! Analytic min–max test problems with closed-form worst-case scenarios.
//!
//! Every problem has the form `f(x, y)` on `X = [lx, ux]^dx`, `Y = [-by, by]^dy`
//! with the interaction term `x^T B y = z^T y`, `z = B^T x`.
//!
//! Sign convention: wherever a worst-case branch depends on `sign(z_i)` and
//! `z_i == 0`, the positive branch is taken. The worst-case value does not
//! depend on that choice.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{moore_penrose, norm2, Matrix, NumericsError, Rng};
use crate::objective::{FcallCounter, MinMaxObjective};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl From<NumericsError> for ProblemError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::RankDeficient => {
                ProblemError::Unsupported("interaction matrix is rank deficient".into())
            }
            other => ProblemError::InvalidInput(other.to_string()),
        }
    }
}

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProblemError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(ProblemError::InvalidInput(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(ProblemError::InvalidInput(
                "box requires finite lower < upper in every coordinate".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, ProblemError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Coordinate-wise projection onto the box.
    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| rng.uniform_in(*l, *u))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
    F10,
    F11,
}

impl ProblemId {
    pub const ALL: [ProblemId; 11] = [
        ProblemId::F1,
        ProblemId::F2,
        ProblemId::F3,
        ProblemId::F4,
        ProblemId::F5,
        ProblemId::F6,
        ProblemId::F7,
        ProblemId::F8,
        ProblemId::F9,
        ProblemId::F10,
        ProblemId::F11,
    ];

    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn category(self) -> SaddleCategory {
        use ProblemId::*;
        match self {
            F1 | F2 => SaddleCategory::Weak,
            F4 | F9 | F10 => SaddleCategory::NotSaddle,
            F3 | F5 | F6 | F7 | F8 | F11 => SaddleCategory::Strict,
        }
    }

    /// Smooth in both arguments.
    pub fn smooth(self) -> bool {
        matches!(self, ProblemId::F5 | ProblemId::F7 | ProblemId::F11)
    }

    /// Problems whose worst-case scenario is defined without a bounded `Y`.
    pub fn supports_unbounded(self) -> bool {
        matches!(self, ProblemId::F5 | ProblemId::F7 | ProblemId::F11)
    }

    pub fn supports_band(self) -> bool {
        !matches!(self, ProblemId::F3 | ProblemId::F10)
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.index())
    }
}

impl FromStr for ProblemId {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let idx: usize = s
            .trim()
            .strip_prefix(['f', 'F'])
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| ProblemError::InvalidInput(format!("unknown problem id `{s}`")))?;
        ProblemId::ALL
            .get(idx.wrapping_sub(1))
            .copied()
            .ok_or_else(|| ProblemError::InvalidInput(format!("unknown problem id `{s}`")))
    }
}

/// Where the min–max solution sits relative to saddle points of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleCategory {
    /// Strict global min–max saddle point.
    Strict,
    /// Weak min–max saddle point.
    Weak,
    /// Not a min–max saddle point.
    NotSaddle,
}

impl SaddleCategory {
    pub fn tag(self) -> &'static str {
        match self {
            SaddleCategory::Strict => "S",
            SaddleCategory::Weak => "W",
            SaddleCategory::NotSaddle => "N",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    #[default]
    Diag,
    Band,
}

/// The `dx x dy` interaction matrix `B`.
#[derive(Clone, Debug, PartialEq)]
pub enum InteractionMatrix {
    /// `b * I`, requires `dx == dy`.
    Diagonal { dim: usize, b: f64 },
    /// Band of width `|dy - dx| + 1` filled with `value`.
    Band { dx: usize, dy: usize, value: f64, dense: Matrix },
}

impl InteractionMatrix {
    pub fn diagonal(dim: usize, b: f64) -> Self {
        InteractionMatrix::Diagonal { dim, b }
    }

    pub fn band(dx: usize, dy: usize, value: f64) -> Self {
        let width = dx.abs_diff(dy) + 1;
        let dense = Matrix::from_fn(dx, dy, |i, j| {
            let offset = if dx <= dy { j.checked_sub(i) } else { i.checked_sub(j) };
            match offset {
                Some(o) if o < width => value,
                _ => 0.0,
            }
        });
        InteractionMatrix::Band {
            dx,
            dy,
            value,
            dense,
        }
    }

    pub fn bandwidth(&self) -> usize {
        match self {
            InteractionMatrix::Diagonal { .. } => 1,
            InteractionMatrix::Band { dx, dy, .. } => dx.abs_diff(*dy) + 1,
        }
    }

    pub fn dense(&self) -> Matrix {
        match self {
            InteractionMatrix::Diagonal { dim, b } => {
                Matrix::from_fn(*dim, *dim, |i, j| if i == j { *b } else { 0.0 })
            }
            InteractionMatrix::Band { dense, .. } => dense.clone(),
        }
    }

    /// `z = B^T x`.
    #[inline]
    pub fn project(&self, x: &[f64], z: &mut [f64]) {
        match self {
            InteractionMatrix::Diagonal { b, .. } => {
                for (zi, xi) in z.iter_mut().zip(x) {
                    *zi = b * xi;
                }
            }
            InteractionMatrix::Band { dense, .. } => {
                z.iter_mut().for_each(|v| *v = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    for (zj, &bij) in z.iter_mut().zip(dense.row(i)) {
                        *zj += bij * xi;
                    }
                }
            }
        }
    }
}

/// Declarative problem parameters as they appear in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub dx: usize,
    pub dy: usize,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub matrix: MatrixKind,
    #[serde(default = "default_by")]
    pub by: f64,
    #[serde(default = "default_lx")]
    pub lx: f64,
    #[serde(default = "default_ux")]
    pub ux: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_bounded")]
    pub bounded: bool,
}

fn default_b() -> f64 {
    1.0
}
fn default_by() -> f64 {
    3.0
}
fn default_lx() -> f64 {
    -3.0
}
fn default_ux() -> f64 {
    3.0
}
fn default_gamma() -> f64 {
    1.0
}
fn default_bounded() -> bool {
    true
}

impl ProblemSpec {
    /// Default settings: `[-3, 3]` domains, `B = b I`, bounded.
    pub fn new(id: ProblemId, dim: usize, b: f64) -> Self {
        Self {
            id,
            dx: dim,
            dy: dim,
            b,
            matrix: MatrixKind::Diag,
            by: default_by(),
            lx: default_lx(),
            ux: default_ux(),
            gamma: default_gamma(),
            bounded: true,
        }
    }

    pub fn unbounded(mut self) -> Self {
        self.bounded = false;
        self
    }

    pub fn build(&self) -> Result<Problem, ProblemError> {
        Problem::new(self)
    }
}

/// A fully constructed test problem.
#[derive(Clone, Debug)]
pub struct Problem {
    spec: ProblemSpec,
    matrix: InteractionMatrix,
    x_domain: BoxDomain,
    y_domain: BoxDomain,
    /// f3 shift `alpha`; zero for other problems.
    alpha: f64,
    /// f9's `min(dy, 3)`.
    dy_star: usize,
    /// f11 coefficients `10^{-3 i / dy}`, `i = 1..dy`.
    f11_scale: Vec<f64>,
}

impl Problem {
    pub fn new(spec: &ProblemSpec) -> Result<Self, ProblemError> {
        let id = spec.id;
        if spec.dx == 0 || spec.dy == 0 {
            return Err(ProblemError::InvalidInput("dimensions must be positive".into()));
        }
        if !(spec.by > 0.0 && spec.by.is_finite()) {
            return Err(ProblemError::InvalidInput("by must be positive".into()));
        }
        if !spec.b.is_finite() || spec.b == 0.0 {
            return Err(ProblemError::InvalidInput("b must be finite and non-zero".into()));
        }
        if !(spec.gamma > 0.0) {
            return Err(ProblemError::InvalidInput("gamma must be positive".into()));
        }
        let x_domain = BoxDomain::cube(spec.dx, spec.lx, spec.ux)?;
        let y_domain = BoxDomain::cube(spec.dy, -spec.by, spec.by)?;
        if !spec.bounded && !id.supports_unbounded() {
            return Err(ProblemError::Unsupported(format!(
                "{id} has no worst-case scenario on an unbounded domain"
            )));
        }
        let matrix = match spec.matrix {
            MatrixKind::Diag => {
                if spec.dx != spec.dy {
                    return Err(ProblemError::InvalidInput(
                        "a diagonal interaction matrix needs dx == dy".into(),
                    ));
                }
                InteractionMatrix::diagonal(spec.dx, spec.b)
            }
            MatrixKind::Band => {
                if !id.supports_band() {
                    return Err(ProblemError::Unsupported(format!(
                        "{id} is only defined for a diagonal interaction matrix"
                    )));
                }
                InteractionMatrix::band(spec.dx, spec.dy, spec.b)
            }
        };
        if id == ProblemId::F10 && !matches!(matrix, InteractionMatrix::Diagonal { b, .. } if b == 1.0)
        {
            return Err(ProblemError::Unsupported(
                "f10 requires dx == dy and B = I".into(),
            ));
        }
        let alpha = if id == ProblemId::F3 {
            let pinv = moore_penrose(&matrix.dense())?;
            // columns b_i^+ of the dy x dx pseudo-inverse, i = 1..dx
            let max_l1 = (0..pinv.cols())
                .map(|j| pinv.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0f64, f64::max);
            -spec.ux.abs().min(spec.lx.abs()) / ((30.0 / 7.0) * max_l1)
        } else {
            0.0
        };
        let f11_scale = (1..=spec.dy)
            .map(|i| 10f64.powf(-3.0 * i as f64 / spec.dy as f64))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            matrix,
            x_domain,
            y_domain,
            alpha,
            dy_star: spec.dy.min(3),
            f11_scale,
        })
    }

    pub fn id(&self) -> ProblemId {
        self.spec.id
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn dx(&self) -> usize {
        self.spec.dx
    }

    pub fn dy(&self) -> usize {
        self.spec.dy
    }

    pub fn by(&self) -> f64 {
        self.spec.by
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dy_star(&self) -> usize {
        self.dy_star
    }

    pub fn matrix(&self) -> &InteractionMatrix {
        &self.matrix
    }

    pub fn category(&self) -> SaddleCategory {
        self.spec.id.category()
    }

    /// `f(x, y)`, charged to `counter`.
    pub fn evaluate(&self, x: &[f64], y: &[f64], counter: &FcallCounter) -> Result<f64, ProblemError> {
        self.check_x(x)?;
        if y.len() != self.dy() {
            return Err(ProblemError::InvalidInput(format!(
                "y has dimension {}, expected {}",
                y.len(),
                self.dy()
            )));
        }
        counter.add(1);
        Ok(self.f(x, y))
    }

    /// Closed-form worst-case scenario `argmax_y f(x, y)`.
    pub fn worst_scenario(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_x(x)?;
        Ok(self.worst_scenario_unchecked(x))
    }

    /// `F(x) = max_y f(x, y)` from the closed form. Not charged to any counter.
    pub fn worst_case_value(&self, x: &[f64]) -> Result<f64, ProblemError> {
        self.check_x(x)?;
        Ok(self.worst_value_unchecked(x))
    }

    pub(crate) fn worst_value_unchecked(&self, x: &[f64]) -> f64 {
        let y = self.worst_scenario_unchecked(x);
        self.f(x, &y)
    }

    /// The min–max solution `x*` and `F(x*)`.
    pub fn optimum(&self) -> Result<(Vec<f64>, f64), ProblemError> {
        let dx = self.dx();
        let x_star = match self.id() {
            ProblemId::F3 => self.solve_projection(&vec![self.alpha; self.dy()])?,
            ProblemId::F9 => {
                let target: Vec<f64> = (0..self.dy())
                    .map(|i| if i < self.dy_star { -(1f64.sinh()) } else { 0.0 })
                    .collect();
                self.solve_projection(&target)?
            }
            _ => vec![0.0; dx],
        };
        let f_star = self.worst_value_unchecked(&x_star);
        Ok((x_star, f_star))
    }

    /// Maximum of `f(x, .)` over a regular grid on `Y` with both endpoints per axis.
    pub fn brute_force_worst_case(&self, x: &[f64], points_per_axis: usize) -> Result<f64, ProblemError> {
        self.check_x(x)?;
        let dy = self.dy();
        if dy > 3 {
            return Err(ProblemError::Unsupported(
                "grid search is limited to dy <= 3".into(),
            ));
        }
        if points_per_axis < 2 {
            return Err(ProblemError::InvalidInput(
                "grid needs at least two points per axis".into(),
            ));
        }
        let lo = -self.by();
        let step = 2.0 * self.by() / (points_per_axis - 1) as f64;
        let coord = |k: usize| if k == points_per_axis - 1 { self.by() } else { lo + step * k as f64 };
        let total = points_per_axis.pow(dy as u32);
        let mut y = vec![0.0; dy];
        let mut best = f64::NEG_INFINITY;
        for flat in 0..total {
            let mut rem = flat;
            for yi in y.iter_mut() {
                *yi = coord(rem % points_per_axis);
                rem /= points_per_axis;
            }
            best = best.max(self.f(x, &y));
        }
        Ok(best)
    }

    fn check_x(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.dx() {
            return Err(ProblemError::InvalidInput(format!(
                "x has dimension {}, expected {}",
                x.len(),
                self.dx()
            )));
        }
        Ok(())
    }

    /// Solves `B^T x = target` exactly, or reports that no solution exists.
    fn solve_projection(&self, target: &[f64]) -> Result<Vec<f64>, ProblemError> {
        match &self.matrix {
            InteractionMatrix::Diagonal { b, .. } => Ok(target.iter().map(|t| t / b).collect()),
            InteractionMatrix::Band { dense, .. } => {
                let bt = dense.transpose();
                let x = moore_penrose(&bt)?.mul_vec(target);
                let resid: Vec<f64> = bt.mul_vec(&x).iter().zip(target).map(|(a, b)| a - b).collect();
                if norm2(&resid) > 1e-9 * norm2(target).max(1.0) {
                    return Err(ProblemError::Unsupported(
                        "optimum condition has no solution for this interaction matrix".into(),
                    ));
                }
                Ok(x)
            }
        }
    }

    fn z(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dy()];
        self.matrix.project(x, &mut z);
        z
    }

    #[inline]
    fn f(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut z = [0.0; 128];
        let mut heap;
        let z: &mut [f64] = if self.dy() <= z.len() {
            &mut z[..self.dy()]
        } else {
            heap = vec![0.0; self.dy()];
            &mut heap
        };
        self.matrix.project(x, z);
        let zy: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let by = self.by();
        match self.id() {
            ProblemId::F1 => zy,
            ProblemId::F2 => 0.5 * xx + zy,
            ProblemId::F3 => {
                let shift = self.alpha - self.gamma() * by;
                let sq: f64 = z.iter().map(|zi| (zi - shift) * (zi - shift)).sum();
                0.5 * sq + self.gamma() * zy
            }
            ProblemId::F4 => 0.5 * xx + zy + 0.5 * yy,
            ProblemId::F5 => 0.5 * xx + zy - 0.5 * yy,
            ProblemId::F6 => {
                let x1: f64 = x.iter().map(|v| v.abs()).sum();
                let y1: f64 = y.iter().map(|v| v.abs()).sum();
                0.5 * xx + x1 + zy - y1 - 0.5 * yy
            }
            ProblemId::F7 => 0.25 * xx * xx + zy - 0.25 * yy * yy,
            ProblemId::F8 => {
                let x1: f64 = x.iter().map(|v| v.abs()).sum();
                let y1: f64 = y.iter().map(|v| v.abs()).sum();
                x1 + zy - y1
            }
            ProblemId::F9 => {
                let k = self.dy_star;
                let head: f64 = z[..k]
                    .iter()
                    .zip(&y[..k])
                    .map(|(zi, yi)| {
                        let t = zi + sign_pos(*yi).exp() * (PI * yi / by).sin();
                        t * t
                    })
                    .sum();
                let tail: f64 = z[k..]
                    .iter()
                    .zip(&y[k..])
                    .map(|(zi, yi)| zi * zi - yi * yi)
                    .sum();
                head + tail
            }
            ProblemId::F10 => {
                let zz: f64 = z.iter().map(|v| v * v).sum();
                let d: f64 = y.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                zz - 2.0 * d
            }
            ProblemId::F11 => {
                let s: f64 = self
                    .f11_scale
                    .iter()
                    .zip(z.iter().zip(y))
                    .map(|(c, (zi, yi))| c * zi * yi - 0.5 * c * c * yi * yi)
                    .sum();
                0.5 * xx + s
            }
        }
    }

    fn worst_scenario_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let z = self.z(x);
        let by = self.by();
        let bounded = self.spec.bounded;
        let clip = |v: f64| if bounded { v.clamp(-by, by) } else { v };
        match self.id() {
            ProblemId::F1 | ProblemId::F2 | ProblemId::F3 | ProblemId::F4 => {
                z.iter().map(|zi| by * sign_pos(*zi)).collect()
            }
            ProblemId::F5 | ProblemId::F10 => z.iter().map(|zi| clip(*zi)).collect(),
            ProblemId::F6 => z
                .iter()
                .map(|&zi| {
                    let a = zi.abs();
                    if a <= 1.0 {
                        0.0
                    } else if a <= by + 1.0 {
                        zi - sign_pos(zi)
                    } else {
                        by * sign_pos(zi)
                    }
                })
                .collect(),
            ProblemId::F7 => f7_worst(&z, bounded.then_some(by)),
            ProblemId::F8 => z
                .iter()
                .map(|&zi| if zi.abs() <= 1.0 { 0.0 } else { by * sign_pos(zi) })
                .collect(),
            ProblemId::F9 => {
                let threshold = -(1f64.sinh());
                z.iter()
                    .enumerate()
                    .map(|(i, &zi)| {
                        if i >= self.dy_star {
                            0.0
                        } else if zi >= threshold {
                            by / 2.0
                        } else {
                            -by / 2.0
                        }
                    })
                    .collect()
            }
            ProblemId::F11 => z
                .iter()
                .zip(&self.f11_scale)
                .map(|(zi, c)| clip(zi / c))
                .collect(),
        }
    }
}

impl MinMaxObjective for Problem {
    fn dim_x(&self) -> usize {
        self.dx()
    }
    fn dim_y(&self) -> usize {
        self.dy()
    }
    fn x_domain(&self) -> &BoxDomain {
        &self.x_domain
    }
    fn y_domain(&self) -> &BoxDomain {
        &self.y_domain
    }
    fn bounded(&self) -> bool {
        self.spec.bounded
    }
    #[inline]
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.f(x, y)
    }
    fn worst_case_oracle(&self, x: &[f64]) -> Option<f64> {
        self.worst_case_value(x).ok()
    }
}

/// `+1` for non-negative input, `-1` otherwise.
#[inline]
fn sign_pos(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Maximizer of `z^T y - |y|^4 / 4` over `[-cap, cap]^d` (or all of `R^d`).
///
/// Stationarity gives `y = z / s` with `s = |y|^2`, so `s^3 = |z|^2` when no
/// coordinate hits the box. With the box, each coordinate is
/// `clamp(z_i / s, -cap, cap)` and `s` is the unique root of the decreasing
/// function `sum_i clamp(z_i / s)^2 - s`, found by bisection.
fn f7_worst(z: &[f64], cap: Option<f64>) -> Vec<f64> {
    let zn = norm2(z);
    if zn == 0.0 {
        return vec![0.0; z.len()];
    }
    let s0 = zn.powf(2.0 / 3.0);
    let free: Vec<f64> = z.iter().map(|zi| zi / s0).collect();
    let Some(cap) = cap else {
        return free;
    };
    if free.iter().all(|v| v.abs() <= cap) {
        return free;
    }
    let residual = |s: f64| z.iter().map(|zi| (zi / s).clamp(-cap, cap).powi(2)).sum::<f64>() - s;
    let (mut lo, mut hi) = (0.0f64, z.len() as f64 * cap * cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    z.iter().map(|zi| (zi / s).clamp(-cap, cap)).collect()
}
