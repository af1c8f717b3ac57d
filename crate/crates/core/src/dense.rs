//! Dense Hermitian eigendecomposition for small clusters.
//!
//! Used for density-matrix linear response (transition lists) and as the
//! reference propagator the sparse Chebyshev path is checked against.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::SparseOperator;

/// Largest spin count for which dense matrices are materialized.
pub const DENSE_MAX_SPINS: usize = 8;

#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: DMatrix<C64>,
}

pub fn to_matrix(h: &SparseOperator) -> DMatrix<C64> {
    let n = h.dim();
    DMatrix::from_row_slice(n, n, &h.to_dense())
}

pub fn eigh(h: &SparseOperator) -> Result<Eigensystem> {
    if h.dim() > 1 << DENSE_MAX_SPINS {
        return Err(Error::Dimension(format!(
            "dense diagonalization limited to dimension {}",
            1 << DENSE_MAX_SPINS
        )));
    }
    h.check_hermitian()?;
    let eig = SymmetricEigen::new(to_matrix(h));
    Ok(Eigensystem { values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors })
}

impl Eigensystem {
    /// `exp(−iHt) v` through the eigenbasis.
    pub fn propagate(&self, v: &[C64], t: f64) -> Vec<C64> {
        let x = nalgebra::DVector::from_column_slice(v);
        let mut c = self.vectors.adjoint() * x;
        for (ci, &e) in c.iter_mut().zip(&self.values) {
            *ci *= C64::from_polar(1.0, -e * t);
        }
        (&self.vectors * c).iter().copied().collect()
    }

    /// Dense unitary `exp(−iHt)`.
    pub fn unitary(&self, t: f64) -> DMatrix<C64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let p = C64::from_polar(1.0, -self.values[j] * t);
            for i in 0..n {
                scaled[(i, j)] *= p;
            }
        }
        scaled * self.vectors.adjoint()
    }
}
