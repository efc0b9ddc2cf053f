//! Row-major dense matrices of `f32` vectors.

use std::ops::Range;

use crate::error::{Error, Result};

/// A row-major `rows × dim` matrix of finite `f32` values.
///
/// Every constructor that ingests external values rejects NaN and infinities,
/// so downstream code can assume finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape(format!(
                "data length {} != {rows} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = pos.checked_div(dim).map_or((0, 0), |row| (row, pos % dim));
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Builds from data already known to be finite (internal results).
    pub(crate) fn from_vec_unchecked(rows: usize, dim: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * dim);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { rows, dim, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size
        let dim = self.dim.max(1);
        self.data.chunks_exact(dim).take(self.rows)
    }

    /// Copies a contiguous range of rows.
    pub fn slice_rows(&self, range: Range<usize>) -> DenseMatrix {
        assert!(range.end <= self.rows, "row range out of bounds");
        let data = self.data[range.start * self.dim..range.end * self.dim].to_vec();
        DenseMatrix {
            rows: range.len(),
            dim: self.dim,
            data,
        }
    }

    /// Gathers the given rows in order.
    pub fn select_rows(&self, ids: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: ids.len(),
            dim: self.dim,
            data,
        }
    }

    /// Copies columns `[start, start + width)` of every row.
    pub fn column_block(&self, start: usize, width: usize) -> DenseMatrix {
        assert!(start + width <= self.dim);
        let mut data = Vec::with_capacity(self.rows * width);
        for r in self.iter_rows() {
            data.extend_from_slice(&r[start..start + width]);
        }
        DenseMatrix {
            rows: self.rows,
            dim: width,
            data,
        }
    }

    pub fn column_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim];
        for r in self.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64;
            }
        }
        if self.rows > 0 {
            let n = self.rows as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    }

    /// Mean over rows of the squared Euclidean distance to `other`.
    pub fn mse(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.dim != other.dim {
            return Err(Error::shape(format!(
                "mse between {}x{} and {}x{}",
                self.rows, self.dim, other.rows, other.dim
            )));
        }
        if self.rows == 0 {
            return Ok(0.0);
        }
        let total: f64 = self
            .iter_rows()
            .zip(other.iter_rows())
            .map(|(a, b)| squared_l2(a, b))
            .sum();
        Ok(total / self.rows as f64)
    }

    /// Multiplies every row by `mᵀ`, where `m` is `out_dim × dim` row-major.
    pub fn mul_transposed(&self, m: &[f64], out_dim: usize) -> DenseMatrix {
        assert_eq!(m.len(), out_dim * self.dim);
        let mut data = Vec::with_capacity(self.rows * out_dim);
        for r in self.iter_rows() {
            for o in 0..out_dim {
                let w = &m[o * self.dim..(o + 1) * self.dim];
                let s: f64 = w.iter().zip(r).map(|(&a, &b)| a * b as f64).sum();
                data.push(s as f32);
            }
        }
        DenseMatrix {
            rows: self.rows,
            dim: out_dim,
            data,
        }
    }

    /// Stacks two matrices with the same dimension vertically.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.dim != other.dim {
            return Err(Error::shape("vstack dimension mismatch"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix {
            rows: self.rows + other.rows,
            dim: self.dim,
            data,
        })
    }
}

/// Squared Euclidean distance with 64-bit accumulation.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        s += d * d;
    }
    s
}
