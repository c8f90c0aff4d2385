//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::matrix::{Matrix, SymMatrix};
use super::NumericsError;

const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-14;

/// Eigenpairs of a symmetric matrix.
///
/// `values` are ascending; column `j` of the row-major `vectors` array is the
/// unit eigenvector for `values[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, j)` of the eigenvector matrix: component `i` of eigenvector `j`.
    #[inline]
    pub fn vector_entry(&self, i: usize, j: usize) -> f64 {
        self.vectors[i * self.dim + j]
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.vector_entry(i, j)).collect()
    }

    pub fn vectors_row_major(&self) -> &[f64] {
        &self.vectors
    }

    pub fn max_value(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vector_entry(i, k) * self.values[k] * self.vector_entry(j, k))
                .sum()
        })
    }

    /// Raises every eigenvalue below `floor` to `floor`. Returns whether any changed.
    pub fn floor_values(&mut self, floor: f64) -> bool {
        let mut changed = false;
        for v in &mut self.values {
            if *v < floor {
                *v = floor;
                changed = true;
            }
        }
        changed
    }

    /// The decomposition of `factor * S`, for `factor > 0`.
    pub fn scaled(&self, factor: f64) -> SymEigen {
        SymEigen {
            values: self.values.iter().map(|v| v * factor).collect(),
            vectors: self.vectors.clone(),
            dim: self.dim,
        }
    }

    /// Rebuilds the matrix after mapping each eigenvalue through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mapped = SymEigen {
            values: self.values.iter().map(|&v| f(v)).collect(),
            vectors: self.vectors.clone(),
            dim: self.dim,
        };
        mapped.reconstruct()
    }
}

/// Eigendecomposition of `s`, starting from the identity basis.
pub fn eigh(s: &SymMatrix) -> Result<SymEigen, NumericsError> {
    if !s.is_finite() {
        return Err(NumericsError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    let n = s.dim();
    let mut a = s.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    jacobi(&mut a, &mut v, n, s.frobenius_norm());
    Ok(finish(a, v, n))
}

/// Eigendecomposition of `s` warm-started from an orthonormal basis `guess`
/// (row-major, eigenvectors in columns), typically the decomposition of a
/// nearby matrix. Rotating into that basis first leaves a nearly diagonal
/// matrix, so the sweeps converge in one or two passes.
pub fn eigh_with_guess(s: &SymMatrix, guess: &SymEigen) -> Result<SymEigen, NumericsError> {
    if !s.is_finite() {
        return Err(NumericsError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    let n = s.dim();
    assert_eq!(guess.dim, n, "guess dimension mismatch");
    let g = &guess.vectors;
    // a = G^T S G
    let sd = s.as_slice();
    let mut sg = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let sik = sd[i * n + k];
            if sik == 0.0 {
                continue;
            }
            let grow = &g[k * n..(k + 1) * n];
            let out = &mut sg[i * n..(i + 1) * n];
            for (o, &gkj) in out.iter_mut().zip(grow) {
                *o += sik * gkj;
            }
        }
    }
    let mut a = vec![0.0; n * n];
    for k in 0..n {
        let grow = &g[k * n..(k + 1) * n];
        let sgrow = &sg[k * n..(k + 1) * n];
        for i in 0..n {
            let gki = grow[i];
            let out = &mut a[i * n..(i + 1) * n];
            for (o, &x) in out.iter_mut().zip(sgrow) {
                *o += gki * x;
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = g[i * n + j];
        }
    }
    jacobi(&mut a, &mut vt, n, s.frobenius_norm());
    Ok(finish(a, vt, n))
}

/// Ratio of the largest to the smallest eigenvalue.
pub fn condition_number(s: &SymMatrix) -> Result<f64, NumericsError> {
    let eig = eigh(s)?;
    condition_of(&eig)
}

pub fn condition_of(eig: &SymEigen) -> Result<f64, NumericsError> {
    let lo = eig.min_value();
    if lo <= 0.0 {
        return Err(NumericsError::NotPositiveDefinite);
    }
    Ok(eig.max_value() / lo)
}

/// Moore–Penrose pseudo-inverse of a full-rank matrix.
///
/// Square diagonal matrices are inverted entrywise. Anything else goes
/// through the Gram matrix of the smaller side, `B^+ = (B^T B)^{-1} B^T` or
/// `B^T (B B^T)^{-1}`, with the inverse taken from a Jacobi eigendecomposition.
pub fn moore_penrose(b: &Matrix) -> Result<Matrix, NumericsError> {
    if b.rows() == 0 || b.cols() == 0 {
        return Err(NumericsError::InvalidInput("empty matrix".into()));
    }
    if b.is_diagonal() {
        let n = b.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let d = b.get(i, i);
            if d == 0.0 || !d.is_finite() {
                return Err(NumericsError::RankDeficient);
            }
            out.set(i, i, 1.0 / d);
        }
        return Ok(out);
    }
    let tall = b.rows() >= b.cols();
    let gram = if tall { b.gram() } else { b.transpose().gram() };
    let eig = eigh(&gram)?;
    let top = eig.max_value();
    if top <= 0.0 || eig.min_value() <= 1e-20 * top {
        return Err(NumericsError::RankDeficient);
    }
    let inv = eig.map_values(|v| 1.0 / v);
    let n = inv.dim();
    let inv = Matrix::from_fn(n, n, |i, j| inv.get(i, j));
    Ok(if tall {
        inv.matmul(&b.transpose())
    } else {
        b.transpose().matmul(&inv)
    })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi sweeps on the symmetric `a`, accumulating rotations into
/// `vt`, whose rows are the eigenvectors.
fn jacobi(a: &mut [f64], vt: &mut [f64], n: usize, frob: f64) {
    let tol = REL_TOL * frob;
    // rotations this small cannot keep the off-diagonal norm above `tol`
    let skip = 0.5 * tol / n as f64;
    let (mut rp, mut rq) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(a, n) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate_rows(a, n, p, q, c, s);
                rp.copy_from_slice(&a[p * n..(p + 1) * n]);
                rq.copy_from_slice(&a[q * n..(q + 1) * n]);
                for ((row, &vp), &vq) in a.chunks_exact_mut(n).zip(&rp).zip(&rq) {
                    row[p] = vp;
                    row[q] = vq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                rotate_rows(vt, n, p, q, c, s);
            }
        }
    }
}

/// `(row_p, row_q) <- (c row_p - s row_q, s row_p + c row_q)` for `p < q`.
#[inline]
fn rotate_rows(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = m.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn finish(a: Vec<f64>, vt: Vec<f64>, n: usize) -> SymEigen {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_row) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new_col] = vt[old_row * n + i];
        }
    }
    SymEigen {
        values,
        vectors,
        dim: n,
    }
}
