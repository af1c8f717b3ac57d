//! Compressed sparse row storage for spin Hamiltonians.
//!
//! Spin Hamiltonians in the Zeeman product basis have a dense diagonal and a
//! handful of off-diagonal entries per row (one per flip-flop or double-flip
//! pair), so the diagonal is stored separately from the CSR off-diagonal part.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Hermiticity tolerance used when validating operators.
pub const HERMITIAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
}

impl SparseOperator {
    /// Builds an operator row by row. The closure receives the row index and a
    /// sink for `(column, value)` off-diagonal entries; it returns the real
    /// diagonal element. Duplicate columns within a row are summed.
    pub fn from_rows<F>(dim: usize, mut row: F) -> Self
    where
        F: FnMut(usize, &mut Vec<(usize, C64)>) -> f64,
    {
        let mut diag = Vec::with_capacity(dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut scratch: Vec<(usize, C64)> = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            scratch.clear();
            diag.push(row(r, &mut scratch));
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = C64::new(0.0, 0.0);
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                if c != r && v.norm() > 0.0 {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator { dim, diag, row_ptr, cols, vals }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_rows(dim, |_, _| 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn nnz_offdiag(&self) -> usize {
        self.vals.len()
    }

    /// Off-diagonal entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&c, &v)| (c as usize, v))
    }

    /// Matrix element `⟨r|A|c⟩`.
    pub fn get(&self, r: usize, c: usize) -> C64 {
        if r == c {
            return C64::new(self.diag[r], 0.0);
        }
        self.row(r).find(|&(cc, _)| cc == c).map(|(_, v)| v).unwrap_or_default()
    }

    /// `y = A x`
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = x[r] * self.diag[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_into(x, &mut y);
        y
    }

    /// Largest deviation `|A_rc − conj(A_cr)|` over all stored entries.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                let t = self.get(c, r);
                worst = worst.max((v - t.conj()).norm());
            }
        }
        worst
    }

    pub fn check_hermitian(&self) -> Result<()> {
        let e = self.hermiticity_error();
        if e > HERMITIAN_TOL {
            Err(Error::NotHermitian(e))
        } else {
            Ok(())
        }
    }

    /// Gershgorin enclosure `[lo, hi]` of the spectrum of a Hermitian operator.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..self.dim {
            let radius: f64 = self.row(r).map(|(_, v)| v.norm()).sum();
            lo = lo.min(self.diag[r] - radius);
            hi = hi.max(self.diag[r] + radius);
        }
        if self.dim == 0 {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        SparseOperator {
            dim: self.dim,
            diag: self.diag.iter().map(|d| d * s).collect(),
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| v * s).collect(),
        }
    }

    /// Sum of two operators of equal dimension.
    pub fn add(&self, other: &SparseOperator) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!("operator dims {} vs {}", self.dim, other.dim)));
        }
        Ok(Self::from_rows(self.dim, |r, sink| {
            sink.extend(self.row(r));
            sink.extend(other.row(r));
            self.diag[r] + other.diag[r]
        }))
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<C64> {
        let n = self.dim;
        let mut m = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            m[r * n + r] = C64::new(self.diag[r], 0.0);
            for (c, v) in self.row(r) {
                m[r * n + c] = v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_x_plus_z() -> SparseOperator {
        SparseOperator::from_rows(2, |r, sink| {
            sink.push((1 - r, C64::new(1.0, 0.0)));
            if r == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    #[test]
    fn matvec_and_bounds() {
        let a = pauli_x_plus_z();
        let y = a.apply(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(y, vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let (lo, hi) = a.gershgorin_bounds();
        assert!(lo <= -(2f64).sqrt() && hi >= (2f64).sqrt());
        assert!(a.check_hermitian().is_ok());
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = SparseOperator::from_rows(2, |r, sink| {
            sink.push((1 - r, C64::new(0.5, 0.0)));
            sink.push((1 - r, C64::new(0.5, 0.0)));
            0.0
        });
        assert_eq!(a.get(0, 1), C64::new(1.0, 0.0));
        assert_eq!(a.nnz_offdiag(), 2);
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let a = SparseOperator::from_rows(2, |r, sink| {
            if r == 0 {
                sink.push((1, C64::new(1.0, 0.0)));
            }
            0.0
        });
        assert!(matches!(a.check_hermitian(), Err(Error::NotHermitian(_))));
    }
}
