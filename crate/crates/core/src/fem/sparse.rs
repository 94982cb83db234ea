use std::fmt::Write as _;

use nalgebra::{DMatrix, DMatrixView};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Compressed-row sparse matrix produced by assembly.
///
/// Structural zeros are dropped when the matrix is finalized, so the stored
/// pattern only holds nonzero values.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    csr: CsrMatrix<f64>,
    symmetric: bool,
}

impl SparseMatrix {
    /// Sums duplicate triplets and removes entries that cancel to zero.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut coo = CooMatrix::new(nrows, ncols);
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::dim("sparse triplet index", nrows.max(ncols), i.max(j)));
            }
            coo.push(i, j, v);
        }
        let csr = CsrMatrix::from(&coo).filter(|_, _, v| *v != 0.0);
        Ok(Self {
            csr,
            symmetric: false,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("indices within bounds")
    }

    pub fn identity(n: usize) -> Self {
        Self {
            csr: CsrMatrix::identity(n),
            symmetric: true,
        }
    }

    /// Marks the matrix symmetric after checking `A = Aᵀ` exactly over the
    /// stored pattern.
    pub fn with_symmetry_checked(mut self) -> Result<Self> {
        if self.nrows() != self.ncols() {
            return Err(Error::dim("symmetric matrix", self.nrows(), self.ncols()));
        }
        for (i, j, v) in self.csr.triplet_iter() {
            let vt = self.csr.get_entry(j, i).map(|e| e.into_value()).unwrap_or(0.0);
            if vt != *v {
                return Err(Error::Config(format!(
                    "matrix is not symmetric at ({i}, {j}): {v} vs {vt}"
                )));
            }
        }
        self.symmetric = true;
        Ok(self)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nrows(&self) -> usize {
        self.csr.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.csr.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.csr
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.csr.get_entry(i, j).map(|e| e.into_value()).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.csr.triplet_iter().map(|(i, j, v)| (i, j, *v))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.csr.row_iter().map(|r| r.values().iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.csr.values().iter().sum()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols(), "sparse matvec input length");
        assert_eq!(y.len(), self.nrows(), "sparse matvec output length");
        let (offsets, cols, vals) = self.csr.csr_data();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in offsets[i]..offsets[i + 1] {
                acc += vals[k] * x[cols[k]];
            }
            *yi = acc;
        }
    }

    /// `A B` for a dense right-hand side.
    pub fn mul_dense(&self, b: DMatrixView<'_, f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.ncols(), "sparse-dense product shape");
        let (offsets, cols, vals) = self.csr.csr_data();
        let mut out = DMatrix::zeros(self.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let bc = b.column(c);
            for i in 0..self.nrows() {
                let mut acc = 0.0;
                for k in offsets[i]..offsets[i + 1] {
                    acc += vals[k] * bc[cols[k]];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }

    /// Restriction to the listed rows and columns, in the given order.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::dim("submatrix index set", 1, 0));
        }
        let mut col_map = vec![usize::MAX; self.ncols()];
        for (k, &c) in cols.iter().enumerate() {
            if c >= self.ncols() {
                return Err(Error::dim("submatrix column", self.ncols(), c));
            }
            col_map[c] = k;
        }
        let mut t = Vec::new();
        for (ri, &r) in rows.iter().enumerate() {
            if r >= self.nrows() {
                return Err(Error::dim("submatrix row", self.nrows(), r));
            }
            let row = self.csr.row(r);
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                if col_map[c] != usize::MAX {
                    t.push((ri, col_map[c], v));
                }
            }
        }
        let out = Self::from_triplets(rows.len(), cols.len(), &t)?;
        Ok(if self.symmetric && rows == cols {
            Self {
                symmetric: true,
                ..out
            }
        } else {
            out
        })
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix) -> Result<Self> {
        if self.nrows() != other.nrows() || self.ncols() != other.ncols() {
            return Err(Error::dim("sparse sum", self.nrows() * self.ncols(), other.nrows() * other.ncols()));
        }
        let t: Vec<_> = self
            .triplets()
            .chain(other.triplets().map(|(i, j, v)| (i, j, alpha * v)))
            .collect();
        let out = Self::from_triplets(self.nrows(), self.ncols(), &t)?;
        Ok(Self {
            symmetric: self.symmetric && other.symmetric,
            ..out
        })
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.csr.values_mut().iter_mut().for_each(|v| *v *= alpha);
        if alpha == 0.0 {
            out.csr = out.csr.filter(|_, _, v| *v != 0.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Sparse Cholesky factorization of an SPD matrix.
    pub fn cholesky(&self) -> Result<SparseCholesky> {
        if self.nrows() != self.ncols() {
            return Err(Error::dim("Cholesky factorization", self.nrows(), self.ncols()));
        }
        let csc = CscMatrix::from(&self.csr);
        let factor = CscCholesky::factor(&csc)
            .map_err(|e| Error::Singular(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(SparseCholesky { factor })
    }

    /// Coordinate text dump: one `row col value` line per stored entry with
    /// 17 significant digits.
    pub fn to_coo_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "% {} {} {}", self.nrows(), self.ncols(), self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(out, "{i} {j} {v:.16e}");
        }
        out
    }
}

pub struct SparseCholesky {
    factor: CscCholesky<f64>,
}

impl SparseCholesky {
    /// Solves for every column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b);
        self.factor.solve(&m).as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (0, 1, 1.0), (0, 1, -1.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 3.0);
    }

    #[test]
    fn symmetry_check() {
        let s = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 2.0)]).unwrap();
        assert!(s.with_symmetry_checked().unwrap().is_symmetric());
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 2.5)]).unwrap();
        assert!(a.with_symmetry_checked().is_err());
    }

    #[test]
    fn submatrix_and_products_match_dense() {
        let d = DMatrix::from_row_slice(3, 3, &[4.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 4.0]);
        let s = SparseMatrix::from_dense(&d);
        let sub = s.submatrix(&[2, 0], &[1, 2]).unwrap().to_dense();
        assert_eq!(sub, DMatrix::from_row_slice(2, 2, &[-1.0, 4.0, -1.0, 0.0]));
        let x = [1.0, 2.0, 3.0];
        let y = s.mul_vec(&x);
        let yd = &d * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(y, yd.as_slice());
        let sol = s.cholesky().unwrap().solve_vec(&y);
        for (a, b) in sol.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn coo_dump_round_trips_values() {
        let s = SparseMatrix::from_triplets(1, 1, &[(0, 0, 1.0 / 3.0)]).unwrap();
        let text = s.to_coo_text();
        let v: f64 = text.lines().nth(1).unwrap().split(' ').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }
}
