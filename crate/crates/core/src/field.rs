//! Nodal space-time vectors.
//!
//! Every space-time quantity in the crate is stored time-major: all spatial
//! values of `t_0`, then all spatial values of `t_1`, and so on. With
//! nalgebra's column-major storage this is exactly an `n_space x n_time`
//! matrix whose columns are time slices.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    n_space: usize,
    n_time: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(n_space: usize, n_time: usize) -> Self {
        Self {
            n_space,
            n_time,
            data: vec![0.0; n_space * n_time],
        }
    }

    pub fn from_vec(n_space: usize, n_time: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_space * n_time {
            return Err(Error::dim("space-time field", n_space * n_time, data.len()));
        }
        Ok(Self {
            n_space,
            n_time,
            data,
        })
    }

    pub fn from_fn(n_space: usize, n_time: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_space * n_time);
        for s in 0..n_time {
            for i in 0..n_space {
                data.push(f(i, s));
            }
        }
        Self {
            n_space,
            n_time,
            data,
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            n_space: m.nrows(),
            n_time: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    #[inline]
    pub fn n_space(&self) -> usize {
        self.n_space
    }

    #[inline]
    pub fn n_time(&self) -> usize {
        self.n_time
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.data[s * self.n_space + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, s: usize, v: f64) {
        self.data[s * self.n_space + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn time_slice(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_space..(s + 1) * self.n_space]
    }

    pub fn matrix(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.n_space, self.n_time)
    }

    pub fn matrix_mut(&mut self) -> DMatrixViewMut<'_, f64> {
        DMatrixViewMut::from_slice(&mut self.data, self.n_space, self.n_time)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_space, self.n_time, &self.data)
    }

    /// Keeps only the listed spatial rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self::from_fn(rows.len(), self.n_time, |k, s| self.get(rows[k], s))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
