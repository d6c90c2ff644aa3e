//! Small dense linear-algebra helpers shared by the density fits and solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Result, VfpError};

/// Relative jitter added at inversion sites: `λ = JITTER · trace / n`.
pub const JITTER: f64 = 1e-8;

/// Cholesky factor of a symmetric positive definite matrix, optionally with
/// the jitter policy applied. The matrix itself is never modified.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    /// Reciprocal diagonal when the matrix is diagonal.
    diag_inv: Option<DVector<f64>>,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>, jitter: bool) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(VfpError::DimensionMismatch { expected: n, got: matrix.ncols() });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(VfpError::NonFinite("covariance"));
        }
        let lambda = if jitter { jitter_amount(matrix) } else { 0.0 };
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        let diagonal = (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0));
        let diag_inv = diagonal.then(|| m.diagonal().map(|d| 1.0 / d));
        let chol = Cholesky::new(m).ok_or(VfpError::NotPositiveDefinite)?;
        Ok(Self { chol, jitter: lambda, diag_inv })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Jitter that was added on the diagonal before factoring.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.diag_inv {
            Some(d) => v.component_mul(d),
            None => self.chol.solve(v),
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.diag_inv {
            Some(d) => DMatrix::from_diagonal(d),
            None => self.chol.inverse(),
        }
    }

    /// Lower-triangular factor `L` with `L Lᵀ = M + λI`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

pub fn jitter_amount(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows().max(1) as f64;
    let tr = matrix.trace();
    let scale = if tr > 0.0 { tr / n } else { 1.0 };
    JITTER * scale
}

/// Symmetric positive semidefinite square root; negative eigenvalues from
/// roundoff are clamped to zero.
pub fn sym_sqrt(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(matrix);
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Projects a symmetric matrix onto the negative semidefinite cone.
pub fn negative_part(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(matrix);
    // Negative definite input needs no eigendecomposition.
    if (-&sym).cholesky().is_some() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l <= 0.0) {
        return sym;
    }
    let vals = eig.eigenvalues.map(|l| l.min(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn symmetrize(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    (matrix + matrix.transpose()) * 0.5
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
