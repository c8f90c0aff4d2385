//! Dense linear algebra, Gaussian sampling and the deterministic RNG shared by
//! every optimizer in the crate.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{condition_number, condition_of, eigh, eigh_with_guess, moore_penrose, SymEigen};
pub use matrix::{dot, norm2, norm_inf, Matrix, SymMatrix};
pub use rng::Rng;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not positive semidefinite")]
    NotPsd,
    #[error("matrix is rank deficient")]
    RankDeficient,
}

/// Draws `m + V diag(sqrt(lambda)) z` with `z` standard normal and `S = V diag(lambda) V^T`.
///
/// Consumes exactly `m.len()` normal draws. Eigenvalues in
/// `[-1e-12 * lambda_max, 0)` are treated as zero.
pub fn sample_gaussian(m: &[f64], s: &SymMatrix, rng: &mut Rng) -> Result<Vec<f64>, NumericsError> {
    if m.len() != s.dim() {
        return Err(NumericsError::InvalidInput(format!(
            "mean has dimension {} but covariance is {}x{}",
            m.len(),
            s.dim(),
            s.dim()
        )));
    }
    let eig = eigh(s)?;
    let sqrt_vals = psd_sqrt_values(&eig)?;
    let z = rng.normal_vec(m.len());
    Ok(transform_sample(m, &eig, &sqrt_vals, &z))
}

pub(crate) fn psd_sqrt_values(eig: &SymEigen) -> Result<Vec<f64>, NumericsError> {
    let top = eig.max_value().max(0.0);
    eig.values
        .iter()
        .map(|&v| {
            if v >= 0.0 {
                Ok(v.sqrt())
            } else if v >= -1e-12 * top {
                Ok(0.0)
            } else {
                Err(NumericsError::NotPsd)
            }
        })
        .collect()
}

/// `m + V diag(scale) z`.
pub(crate) fn transform_sample(m: &[f64], eig: &SymEigen, scale: &[f64], z: &[f64]) -> Vec<f64> {
    let n = m.len();
    let dz: Vec<f64> = scale.iter().zip(z).map(|(a, b)| a * b).collect();
    let mut out = m.to_vec();
    let v = eig.vectors_row_major();
    for i in 0..n {
        let row = &v[i * n..(i + 1) * n];
        out[i] += dot(row, &dz);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_covariance_returns_mean() {
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let x = sample_gaussian(&[0.0, 0.0], &SymMatrix::zeros(2), &mut rng).unwrap();
            assert_eq!(x, vec![0.0, 0.0]);
        }
        let x = sample_gaussian(&[5.0], &SymMatrix::zeros(1), &mut rng).unwrap();
        assert_eq!(x, vec![5.0]);
    }

    #[test]
    fn rejects_negative_definite() {
        let mut rng = Rng::new(1);
        let s = SymMatrix::from_diag(&[1.0, -0.5]);
        assert_eq!(sample_gaussian(&[0.0, 0.0], &s, &mut rng), Err(NumericsError::NotPsd));
        // tiny negative eigenvalue is clamped
        let s = SymMatrix::from_diag(&[1.0, -1e-14]);
        assert!(sample_gaussian(&[0.0, 0.0], &s, &mut rng).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = Rng::new(1);
        assert!(matches!(
            sample_gaussian(&[0.0], &SymMatrix::identity(2), &mut rng),
            Err(NumericsError::InvalidInput(_))
        ));
    }

    #[test]
    fn consumes_dim_normals() {
        let mut a = Rng::new(9);
        let mut b = Rng::new(9);
        sample_gaussian(&[0.0; 3], &SymMatrix::identity(3), &mut a).unwrap();
        for _ in 0..3 {
            b.normal();
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn empirical_moments() {
        let mut rng = Rng::new(17);
        let n = 100_000;
        let s = SymMatrix::identity(2);
        let mut mean = [0.0; 2];
        let mut cov = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = sample_gaussian(&[0.0, 0.0], &s, &mut rng).unwrap();
            for i in 0..2 {
                mean[i] += x[i];
                for j in 0..2 {
                    cov[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..2 {
            mean[i] /= n as f64;
            assert!(mean[i].abs() < 0.02);
        }
        for i in 0..2 {
            for j in 0..2 {
                let c = cov[i][j] / n as f64 - mean[i] * mean[j];
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.05);
            }
        }
    }

    #[test]
    fn bit_identical_replay() {
        let s = SymMatrix::from_row_major(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let a = sample_gaussian(&[1.0, -1.0], &s, &mut Rng::new(5)).unwrap();
        let b = sample_gaussian(&[1.0, -1.0], &s, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
