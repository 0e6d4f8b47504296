//! Dense complex matrices for channel and precoder algebra.
//!
//! [`ComplexMatrix`] wraps an `nalgebra` matrix and enforces that every entry
//! is finite. Column vectors (M×1) carry per-user channels in the precoding
//! code; row vectors (1×M) carry the effective channels `hᴴ` seen by a user.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default cap on the condition number of Gram matrices before a solve is
/// declared singular.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{:?}", self.0)
    }
}

impl Deref for ComplexMatrix {
    type Target = DMatrix<C64>;
    fn deref(&self) -> &DMatrix<C64> {
        &self.0
    }
}

impl ComplexMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 && m.ncols() == 0 {
            return Ok(Self(m));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("matrix contains non-finite entries".into()));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix produced by arithmetic on finite inputs.
    pub(crate) fn wrap(m: DMatrix<C64>) -> Self {
        debug_assert!(m.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        Self(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self::wrap(DMatrix::from_fn(rows, cols, f))
    }

    /// Builds a matrix from entries listed row by row.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dim(
                "from_row_slice",
                rows * cols,
                entries.len(),
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_real_rows(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        let z: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_row_slice(rows, cols, &z)
    }

    pub fn column_vector(entries: &[C64]) -> Self {
        Self::wrap(DMatrix::from_column_slice(entries.len(), 1, entries))
    }

    pub fn row_vector(entries: &[C64]) -> Self {
        Self::wrap(DMatrix::from_row_slice(1, entries.len(), entries))
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let n = entries.len();
        Self::from_fn(n, n, |i, j| if i == j { entries[i] } else { C64::new(0.0, 0.0) })
    }

    /// Places the given column vectors side by side.
    pub fn from_columns(columns: &[ComplexMatrix], rows: usize) -> Result<Self> {
        let mut out = DMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.nrows() != rows || c.ncols() != 1 {
                return Err(Error::dim(
                    "from_columns",
                    format!("{rows}x1"),
                    format!("{}x{}", c.nrows(), c.ncols()),
                ));
            }
            out.set_column(j, &c.0.column(0));
        }
        Ok(Self::wrap(out))
    }

    /// Stacks row vectors on top of each other.
    pub fn from_rows(rows: &[ComplexMatrix], cols: usize) -> Result<Self> {
        let mut out = DMatrix::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.nrows() != 1 || r.ncols() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("1x{cols}"),
                    format!("{}x{}", r.nrows(), r.ncols()),
                ));
            }
            out.set_row(i, &r.0.row(0));
        }
        Ok(Self::wrap(out))
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn column(&self, j: usize) -> ComplexMatrix {
        Self::wrap(self.0.columns(j, 1).into_owned())
    }

    pub fn row(&self, i: usize) -> ComplexMatrix {
        Self::wrap(self.0.rows(i, 1).into_owned())
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        Self::wrap(self.0.adjoint())
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{} rows on the right", self.cols()),
                rhs.rows(),
            ));
        }
        Ok(Self::wrap(&self.0 * &rhs.0))
    }

    pub fn add(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.same_shape("add", rhs)?;
        Ok(Self::wrap(&self.0 + &rhs.0))
    }

    pub fn sub(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.same_shape("sub", rhs)?;
        Ok(Self::wrap(&self.0 - &rhs.0))
    }

    pub fn scale(&self, s: C64) -> ComplexMatrix {
        Self::wrap(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> ComplexMatrix {
        self.scale(C64::new(s, 0.0))
    }

    /// Sum of squared magnitudes of all entries.
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `selfᴴ · rhs` for two column vectors of equal length.
    pub fn inner_product(&self, rhs: &ComplexMatrix) -> Result<C64> {
        if self.ncols() != 1 || rhs.ncols() != 1 || self.nrows() != rhs.nrows() {
            return Err(Error::dim(
                "inner_product",
                format!("two {}x1 vectors", self.nrows()),
                format!("{}x{}", rhs.nrows(), rhs.ncols()),
            ));
        }
        Ok(self
            .0
            .iter()
            .zip(rhs.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn max_abs_diff(&self, rhs: &ComplexMatrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape());
        self.0
            .iter()
            .zip(rhs.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, op: &'static str, rhs: &ComplexMatrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(
                op,
                format!("{}x{}", self.rows(), self.cols()),
                format!("{}x{}", rhs.rows(), rhs.cols()),
            ));
        }
        Ok(())
    }
}

/// Inverse of the Hermitian Gram matrix `HᴴH` of the columns of `h`.
///
/// Fails with [`Error::Singular`] when the condition number exceeds `cap`;
/// the reported columns are those carrying weight in the eigenvector of the
/// smallest eigenvalue, i.e. the ones involved in the near-dependency.
pub(crate) fn gram_inverse(
    h: &ComplexMatrix,
    cap: f64,
    context: &'static str,
) -> Result<DMatrix<C64>> {
    let gram = h.0.adjoint() * &h.0;
    let eig = SymmetricEigen::new(gram.clone());
    let (mut lo, mut lo_idx, mut hi) = (f64::INFINITY, 0, 0.0f64);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < lo {
            lo = ev;
            lo_idx = i;
        }
        hi = hi.max(ev);
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let singular = |condition: f64| {
        let v = eig.eigenvectors.column(lo_idx);
        let columns = v
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm() > 1e-3)
            .map(|(i, _)| i)
            .collect();
        Error::Singular {
            context,
            condition,
            columns,
        }
    };
    if !(condition <= cap) {
        return Err(singular(condition));
    }
    let chol = Cholesky::new(gram).ok_or_else(|| singular(condition))?;
    Ok(chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rejects_non_finite_entries() {
        let m = DMatrix::from_element(2, 2, c(f64::NAN, 0.0));
        assert!(matches!(ComplexMatrix::new(m), Err(Error::Domain(_))));
    }

    #[test]
    fn matmul_checks_dimensions() {
        let a = ComplexMatrix::zeros(2, 3);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn inner_product_conjugates_left() {
        let a = ComplexMatrix::column_vector(&[c(0.0, 1.0)]);
        let b = ComplexMatrix::column_vector(&[c(0.0, 1.0)]);
        assert_eq!(a.inner_product(&b).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn gram_inverse_flags_dependent_columns() {
        let h = ComplexMatrix::from_real_rows(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap();
        match gram_inverse(&h, DEFAULT_CONDITION_CAP, "test") {
            Err(Error::Singular { columns, .. }) => {
                assert!(columns.contains(&0) && columns.contains(&1));
                assert!(!columns.contains(&2));
            }
            other => panic!("expected singular, got {other:?}"),
        }
    }
}
