use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense symmetric matrix stored in full row-major form.
///
/// Every write goes through [`SymMatrix::set`], which mirrors the entry, so
/// `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries. Entries that differ from their
    /// transpose by more than a relative 1e-12 are rejected; the stored matrix
    /// is the exact average of the two triangles.
    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self, NumericsError> {
        if dim == 0 || data.len() != dim * dim {
            return Err(NumericsError::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        let scale = data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let a = data[i * dim + j];
                let b = data[j * dim + i];
                if (a - b).abs() > 1e-12 * scale {
                    return Err(NumericsError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
                m.set(i, j, 0.5 * (a + b));
            }
        }
        Ok(m)
    }

    /// Builds a symmetric matrix from the upper triangle produced by `f(i, j)`, `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.scale(factor);
        m
    }

    /// Replaces `self` by `D self D` with `D = diag(d)`.
    pub fn scale_sym(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            for j in 0..n {
                self.data[i * n + j] *= d[i] * d[j];
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| dot(&self.data[i * n..(i + 1) * n], v))
            .collect()
    }

    /// `self <- a * self + b * u u^T`.
    pub fn rank_one_update(&mut self, a: f64, b: f64, u: &[f64]) {
        let n = self.dim;
        for i in 0..n {
            for j in 0..n {
                self.data[i * n + j] = a * self.data[i * n + j] + b * u[i] * u[j];
            }
        }
    }

    /// `self += b * u u^T` without rescaling.
    pub fn add_outer(&mut self, b: f64, u: &[f64]) {
        let n = self.dim;
        for i in 0..n {
            let bu = b * u[i];
            let row = &mut self.data[i * n..(i + 1) * n];
            for (r, &uj) in row.iter_mut().zip(u) {
                *r += bu * uj;
            }
        }
    }

    /// Restores exact symmetry after floating-point accumulation by averaging
    /// the two triangles.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    /// Lower-triangular Cholesky factor `L` (row-major, `self = L L^T`), or
    /// `None` when a pivot is not strictly positive.
    pub fn cholesky(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(l)
    }
}

/// Dense general matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `true` when every off-diagonal entry is exactly zero and the matrix is square.
    pub fn is_diagonal(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn frobenius_distance(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Gram matrix `self^T self`.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_fn(self.cols, |i, j| {
            (0..self.rows).map(|k| self.get(k, i) * self.get(k, j)).sum()
        })
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
