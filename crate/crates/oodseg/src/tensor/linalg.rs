//! Eigenvalue/SVD, Cholesky and Gaussian-model kernels.
//!
//! Singular values are computed from the Gram matrix of the (short) row
//! dimension with a cyclic Jacobi eigensolver. Feature matrices here are
//! channels x voxels with few channels, so the Gram route is both exact
//! and small. Gaussian models factor a shrinkage-regularized covariance
//! with a packed Cholesky; Mahalanobis distances go through triangular
//! solves and never materialize the inverse.

use rayon::prelude::*;

use super::metric::dot;
use super::{Tensor, TensorError};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFFDIAG_TOL: f64 = 1e-12;

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
///
/// `a` is a dense row-major n x n matrix and is consumed as scratch.
/// Converges when the off-diagonal Frobenius norm drops below
/// `1e-12 * max(1, |A|_F)`; errors after 100 sweeps.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Result<Vec<f64>, TensorError> {
    assert_eq!(a.len(), n * n);
    if n == 1 {
        return Ok(vec![a[0]]);
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = JACOBI_OFFDIAG_TOL * norm.max(1.0);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            return Ok((0..n).map(|i| a[i * n + i]).collect());
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-root tangent for stability.
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(TensorError::NotConverged {
        op: "jacobi_eigenvalues",
        iterations: JACOBI_MAX_SWEEPS,
    })
}

/// Singular values of an N x K matrix with N <= K, descending.
///
/// Returns the square roots of the eigenvalues of the N x N Gram matrix
/// `M Mt`, clamped at zero. Callers with tall matrices transpose first.
pub fn svd_singular_values(matrix: &Tensor) -> Result<Vec<f64>, TensorError> {
    if matrix.rank() != 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: matrix.rank(),
        });
    }
    let (n, k) = (matrix.shape()[0], matrix.shape()[1]);
    if n == 0 || k == 0 {
        return Err(TensorError::Empty {
            op: "svd_singular_values",
        });
    }
    if n > k {
        return Err(TensorError::WideMatrixRequired { rows: n, cols: k });
    }
    if !matrix.all_finite() {
        return Err(TensorError::NonFinite {
            op: "svd_singular_values",
        });
    }
    let m = matrix.to_f64_vec();
    let mut gram = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&m[i * k..(i + 1) * k], &m[j * k..(j + 1) * k]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let mut eig = jacobi_eigenvalues(gram, n)?;
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(eig.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// In-place Cholesky of a packed lower-triangular symmetric matrix.
///
/// Packed layout: row i starts at i*(i+1)/2 and holds i+1 entries, so row
/// prefixes are contiguous and the inner dot products vectorize.
pub(crate) fn cholesky_packed(a: &mut [f64], n: usize) -> Result<(), TensorError> {
    debug_assert_eq!(a.len(), n * (n + 1) / 2);
    for i in 0..n {
        let (head, row_i) = a.split_at_mut(i * (i + 1) / 2);
        let row_i = &mut row_i[..i + 1];
        for j in 0..i {
            let row_j = &head[j * (j + 1) / 2..j * (j + 1) / 2 + j + 1];
            let s = dot(&row_i[..j], &row_j[..j]);
            row_i[j] = (row_i[j] - s) / row_j[j];
        }
        let s = dot(&row_i[..i], &row_i[..i]);
        let d = row_i[i] - s;
        if d <= 0.0 || !d.is_finite() {
            return Err(TensorError::NotPositiveDefinite { pivot: i });
        }
        row_i[i] = d.sqrt();
    }
    Ok(())
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// A multivariate Gaussian fitted to feature vectors: mean, sample
/// covariance, and the Cholesky factor of the shrinkage-regularized
/// covariance used for Mahalanobis distances.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: Vec<f64>,
    /// Packed lower triangle of the (unregularized) sample covariance.
    cov: Vec<f64>,
    /// Packed lower-triangular Cholesky factor of `cov + lambda I`.
    chol: Vec<f64>,
    lambda: f64,
    dim: usize,
}

/// Absolute floor for the ridge added to the covariance diagonal.
pub const SHRINKAGE_FLOOR: f64 = 1e-8;

impl GaussianModel {
    /// Build from explicit moments. `covariance` must be a symmetric
    /// rank-2 tensor (checked to 1e-9 relative).
    pub fn from_mean_cov(
        mean: Vec<f64>,
        covariance: &Tensor,
        shrinkage: f64,
    ) -> Result<GaussianModel, TensorError> {
        if covariance.rank() != 2 || covariance.shape()[0] != covariance.shape()[1] {
            return Err(TensorError::RankMismatch {
                expected: 2,
                got: covariance.rank(),
            });
        }
        let m = covariance.shape()[0];
        if mean.len() != m {
            return Err(TensorError::DimensionMismatch {
                expected: m,
                got: mean.len(),
            });
        }
        let scale = covariance.iter_f64().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut packed = vec![0.0f64; m * (m + 1) / 2];
        for i in 0..m {
            for j in 0..=i {
                let lo = covariance.get(&[i, j]);
                let hi = covariance.get(&[j, i]);
                if (lo - hi).abs() > 1e-9 * scale.max(1e-300) {
                    return Err(TensorError::NotSymmetric { row: i, col: j });
                }
                packed[packed_index(i, j)] = 0.5 * (lo + hi);
            }
        }
        Self::from_packed(mean, packed, shrinkage)
    }

    fn from_packed(
        mean: Vec<f64>,
        cov: Vec<f64>,
        shrinkage: f64,
    ) -> Result<GaussianModel, TensorError> {
        let m = mean.len();
        let trace: f64 = (0..m).map(|i| cov[packed_index(i, i)]).sum();
        let lambda = (shrinkage * trace / m as f64).max(SHRINKAGE_FLOOR);
        let mut chol = cov.clone();
        for i in 0..m {
            chol[packed_index(i, i)] += lambda;
        }
        cholesky_packed(&mut chol, m)?;
        Ok(GaussianModel {
            mean,
            cov,
            chol,
            lambda,
            dim: m,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Sample covariance entry (i, j).
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.cov[packed_index(a, b)]
    }

    /// Packed lower triangle of the sample covariance (for persistence).
    pub fn covariance_packed(&self) -> &[f64] {
        &self.cov
    }

    pub fn cholesky_packed_factor(&self) -> &[f64] {
        &self.chol
    }

    /// Rebuild from persisted packed parts, revalidating the factor shape.
    pub fn from_parts(
        mean: Vec<f64>,
        cov_packed: Vec<f64>,
        chol_packed: Vec<f64>,
        lambda: f64,
    ) -> Result<GaussianModel, TensorError> {
        let m = mean.len();
        let plen = m * (m + 1) / 2;
        if cov_packed.len() != plen || chol_packed.len() != plen {
            return Err(TensorError::DimensionMismatch {
                expected: plen,
                got: cov_packed.len().max(chol_packed.len()),
            });
        }
        Ok(GaussianModel {
            mean,
            cov: cov_packed,
            chol: chol_packed,
            lambda,
            dim: m,
        })
    }

    /// Mahalanobis distance of `x` under the regularized covariance,
    /// via forward and backward triangular solves against the factor.
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64, TensorError> {
        if x.len() != self.dim {
            return Err(TensorError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let n = self.dim;
        let l = &self.chol;
        let mut z: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let diff = z.clone();
        // forward solve L z = d
        for i in 0..n {
            let row = &l[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
            let s = dot(&row[..i], &z[..i]);
            z[i] = (z[i] - s) / row[i];
        }
        // backward solve Lt w = z, expressed as row-wise axpy updates so
        // the packed rows stay contiguous
        let mut w = z;
        for i in (0..n).rev() {
            let row = &l[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
            w[i] /= row[i];
            let wi = w[i];
            let (wh, _) = w.split_at_mut(i);
            for (wj, lij) in wh.iter_mut().zip(&row[..i]) {
                *wj -= lij * wi;
            }
        }
        Ok(dot(&diff, &w).max(0.0).sqrt())
    }
}

/// Fit a [`GaussianModel`] to row-major samples (n x M).
///
/// The mean is the column mean; the covariance is the unbiased sample
/// covariance for n >= 2 and the zero matrix for n == 1. The regularized
/// covariance adds `lambda = max(shrinkage * trace / M, 1e-8)` on the
/// diagonal before factoring.
pub fn fit_gaussian(samples: &Tensor, shrinkage: f64) -> Result<GaussianModel, TensorError> {
    if samples.rank() != 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: samples.rank(),
        });
    }
    let (n, m) = (samples.shape()[0], samples.shape()[1]);
    if n == 0 || m == 0 {
        return Err(TensorError::Empty { op: "fit_gaussian" });
    }
    if !samples.all_finite() {
        return Err(TensorError::NonFinite { op: "fit_gaussian" });
    }
    let data = samples.to_f64_vec();
    let mut mean = vec![0.0f64; m];
    for row in data.chunks_exact(m) {
        for (mu, x) in mean.iter_mut().zip(row) {
            *mu += x;
        }
    }
    for mu in &mut mean {
        *mu /= n as f64;
    }
    let mut cov = vec![0.0f64; m * (m + 1) / 2];
    if n >= 2 {
        // Transposed centered data: feature rows contiguous, so each
        // covariance entry is one dot product over n.
        let mut centered_t = vec![0.0f64; m * n];
        for (s, row) in data.chunks_exact(m).enumerate() {
            for j in 0..m {
                centered_t[j * n + s] = row[j] - mean[j];
            }
        }
        let denom = (n - 1) as f64;
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(m);
        let mut rest = cov.as_mut_slice();
        for i in 0..m {
            let (row, tail) = rest.split_at_mut(i + 1);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            let fi = &centered_t[i * n..(i + 1) * n];
            for (j, out) in row.iter_mut().enumerate() {
                *out = dot(fi, &centered_t[j * n..(j + 1) * n]) / denom;
            }
        });
    }
    GaussianModel::from_packed(mean, cov, shrinkage)
}
