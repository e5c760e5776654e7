//! Small dense/sparse linear-algebra helpers shared by the solvers and the mixture code.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, LU};

use crate::{Error, Result};

/// Largest dimension for which covariance matrices are checked by eigen-decomposition.
pub(crate) const PSD_CHECK_MAX_DIM: usize = 512;

/// An LU factorization of a square matrix, dense or sparse.
pub(crate) enum Factorization {
    Dense(LU<f64, Dyn, Dyn>),
    Sparse {
        n: usize,
        lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    },
}

impl Factorization {
    pub fn dense(m: DMatrix<f64>, what: &str) -> Result<Self> {
        let lu = m.lu();
        let u = lu.u();
        let diag = u.diagonal();
        let max = diag.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(max > 0.0) || !(min > 1e-13 * max) || !min.is_finite() {
            return Err(Error::Singular(format!("{what} (pivot ratio {:.1e})", min / max)));
        }
        Ok(Self::Dense(lu))
    }

    /// Factorizes an `n × n` matrix given as `(row, col, value)` entries
    /// (duplicates are summed).
    pub fn sparse(n: usize, entries: &[(usize, usize, f64)], what: &str) -> Result<Self> {
        let triplets: Vec<Triplet<usize, usize, f64>> = entries
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Singular(format!("{what}: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::Singular(format!("{what}: {e:?}")))?;
        let f = Self::Sparse { n, lu };
        // Numerical singularity shows up as non-finite solutions.
        let probe = f.solve(&DVector::from_element(n, 1.0));
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(what.to_string()));
        }
        Ok(f)
    }

    /// Dense below `dense_limit` rows, sparse above.
    pub fn auto(
        n: usize,
        entries: &[(usize, usize, f64)],
        dense_limit: usize,
        what: &str,
    ) -> Result<Self> {
        if n <= dense_limit {
            let mut m = DMatrix::zeros(n, n);
            for &(r, c, v) in entries {
                m[(r, c)] += v;
            }
            Self::dense(m, what)
        } else {
            Self::sparse(n, entries, what)
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(lu) => lu
                .solve(b)
                .unwrap_or_else(|| DVector::from_element(b.len(), f64::NAN)),
            Self::Sparse { n, lu } => {
                let mut rhs = Mat::<f64>::from_fn(*n, 1, |i, _| b[i]);
                lu.solve_in_place(rhs.as_mut());
                DVector::from_fn(*n, |i, _| rhs[(i, 0)])
            }
        }
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Dense(lu) => lu
                .solve(b)
                .unwrap_or_else(|| DMatrix::from_element(b.nrows(), b.ncols(), f64::NAN)),
            Self::Sparse { n, lu } => {
                let mut rhs = Mat::<f64>::from_fn(*n, b.ncols(), |i, j| b[(i, j)]);
                lu.solve_in_place(rhs.as_mut());
                DMatrix::from_fn(*n, b.ncols(), |i, j| rhs[(i, j)])
            }
        }
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetrizes `m` and, for moderate sizes, clips tiny negative eigenvalues to zero.
/// Eigenvalues below `-1e-10` (relative to the spectrum scale when it exceeds one) are an error.
pub(crate) fn enforce_psd(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetrize(&mut m);
    let n = m.nrows();
    if n == 0 || n > PSD_CHECK_MAX_DIM {
        return Ok(m);
    }
    if m.clone().cholesky().is_some() {
        return Ok(m);
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    // Rounding-level negatives are left alone, which keeps the operation idempotent.
    if min >= -1e-13 * scale {
        return Ok(m);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// A factor `L` with `L Lᵀ = m` for a symmetric PSD matrix (Cholesky, with an
/// eigen-decomposition fallback for singular matrices).
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq)
}
