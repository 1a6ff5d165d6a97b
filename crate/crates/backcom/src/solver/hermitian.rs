//! Hermitian matrix blocks: real parameterization and the real symmetric
//! embedding used by the interior-point engine.
//!
//! An `m x m` Hermitian matrix is packed into `m^2` real parameters: the `m`
//! diagonal entries first, then `(re, im)` pairs for every upper-triangle
//! entry in row-major order. All spectral computations go through the
//! embedding `W = X + iY  ->  [[X, -Y], [Y, X]]`, which is symmetric
//! (positive definite) exactly when `W` is Hermitian (positive definite) and
//! doubles traces and log-determinants.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Number of real parameters of an `m x m` Hermitian block.
pub fn param_count(dim: usize) -> usize {
    dim * dim
}

/// Unpack parameters into the Hermitian matrix they encode.
pub fn to_matrix(params: &[f64], dim: usize) -> DMatrix<Complex64> {
    debug_assert_eq!(params.len(), param_count(dim));
    let mut w = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        w[(k, k)] = Complex64::new(params[k], 0.0);
    }
    let mut idx = dim;
    for j in 0..dim {
        for k in (j + 1)..dim {
            let entry = Complex64::new(params[idx], params[idx + 1]);
            idx += 2;
            w[(j, k)] = entry;
            w[(k, j)] = entry.conj();
        }
    }
    w
}

/// Pack a Hermitian matrix into its parameter vector (upper triangle read).
pub fn from_matrix(w: &DMatrix<Complex64>) -> Vec<f64> {
    let dim = w.nrows();
    let mut params = Vec::with_capacity(param_count(dim));
    for k in 0..dim {
        params.push(w[(k, k)].re);
    }
    for j in 0..dim {
        for k in (j + 1)..dim {
            params.push(w[(j, k)].re);
            params.push(w[(j, k)].im);
        }
    }
    params
}

/// Coefficients of the real-linear form `Tr(A W)` over the parameter vector
/// of `W`, for Hermitian `A`.
pub fn trace_coeffs(a: &DMatrix<Complex64>) -> Vec<f64> {
    let dim = a.nrows();
    let mut coeffs = Vec::with_capacity(param_count(dim));
    for k in 0..dim {
        coeffs.push(a[(k, k)].re);
    }
    for j in 0..dim {
        for k in (j + 1)..dim {
            coeffs.push(2.0 * a[(j, k)].re);
            coeffs.push(2.0 * a[(j, k)].im);
        }
    }
    coeffs
}

/// Real symmetric embedding `[[X, -Y], [Y, X]]` of `W = X + iY`.
pub fn realify(w: &DMatrix<Complex64>) -> DMatrix<f64> {
    let m = w.nrows();
    let mut r = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = w[(i, j)];
            r[(i, j)] = z.re;
            r[(i + m, j + m)] = z.re;
            r[(i, j + m)] = -z.im;
            r[(i + m, j)] = z.im;
        }
    }
    r
}

/// Recover the complex matrix from its real embedding, averaging the two
/// redundant copies of each component.
pub fn derealify(r: &DMatrix<f64>) -> DMatrix<Complex64> {
    let m = r.nrows() / 2;
    DMatrix::from_fn(m, m, |i, j| {
        let re = 0.5 * (r[(i, j)] + r[(i + m, j + m)]);
        let im = 0.5 * (r[(i + m, j)] - r[(i, j + m)]);
        Complex64::new(re, im)
    })
}

/// Eigendecomposition of a Hermitian matrix through its real embedding.
///
/// Returns eigenvalue/eigenvector pairs sorted descending. Each eigenvalue of
/// `W` appears twice in the embedding; duplicates are collapsed by keeping
/// every other pair, and each retained real eigenvector `(u; v)` maps to the
/// complex eigenvector `u + iv`.
pub fn hermitian_eigen(w: &DMatrix<Complex64>) -> (Vec<f64>, Vec<DVector<Complex64>>) {
    let m = w.nrows();
    let eig = nalgebra::SymmetricEigen::new(realify(w));
    let mut order: Vec<usize> = (0..2 * m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for pair in 0..m {
        let idx = order[2 * pair];
        values.push(eig.eigenvalues[idx]);
        let col = eig.eigenvectors.column(idx);
        let z = DVector::from_fn(m, |i, _| Complex64::new(col[i], col[i + m]));
        vectors.push(z);
    }
    (values, vectors)
}

/// Cholesky-based strict positive-definiteness test of the embedding.
pub fn is_positive_definite(w: &DMatrix<Complex64>) -> bool {
    nalgebra::Cholesky::new(realify(w)).is_some()
}

/// Inverse of a Hermitian positive definite matrix via its embedding.
pub fn hpd_inverse(w: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    nalgebra::Cholesky::new(realify(w)).map(|c| derealify(&c.inverse()))
}

/// `log det` of the real embedding (twice the complex log-determinant).
pub fn realified_log_det(w: &DMatrix<Complex64>) -> Option<f64> {
    nalgebra::Cholesky::new(realify(w))
        .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Force exact Hermitian symmetry, averaging away round-off drift.
pub fn symmetrize(w: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let m = w.nrows();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(w[(i, j)].re, 0.0)
        } else {
            0.5 * (w[(i, j)] + w[(j, i)].conj())
        }
    })
}
