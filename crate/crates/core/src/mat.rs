//! Row-major dense matrix used for embedding tables and transforms.

use std::fmt;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::real::{axpy, Real};

#[derive(Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, alpha: T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * alpha).collect(),
        }
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Applies `w` to every row treated as a column vector: `out[n] = w · self[n]`.
    pub fn map_rows_by(&self, w: &Mat<T>, exec: Exec) -> Mat<T> {
        assert_eq!(w.cols, self.cols, "transform width mismatch");
        let mut out = Mat::zeros(self.rows, w.rows);
        exec.for_each_row(&mut out.data, w.rows, |n, out_row| {
            let x = self.row(n);
            for (r, o) in out_row.iter_mut().enumerate() {
                let wr = w.row(r);
                let mut acc = T::zero();
                for (&a, &b) in wr.iter().zip(x) {
                    acc += a * b;
                }
                *o = acc;
            }
        });
        out
    }

    /// `selfᵀ · other`, i.e. `out[r][c] = Σ_n self[n][r] · other[n][c]`.
    ///
    /// Each output row is reduced over `n` in ascending order.
    pub fn transpose_mul(&self, other: &Mat<T>, exec: Exec) -> Mat<T> {
        assert_eq!(self.rows, other.rows, "row count mismatch in transpose_mul");
        let mut out = Mat::zeros(self.cols, other.cols);
        exec.for_each_row(&mut out.data, other.cols, |r, out_row| {
            for n in 0..self.rows {
                let a = self.get(n, r);
                if a != T::zero() {
                    axpy(a, other.row(n), out_row);
                }
            }
        });
        out
    }

    /// Plain `self · other`.
    pub fn matmul(&self, other: &Mat<T>, exec: Exec) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch in matmul");
        let mut out = Mat::zeros(self.rows, other.cols);
        exec.for_each_row(&mut out.data, other.cols, |r, out_row| {
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, other.row(k), out_row);
                }
            }
        });
        out
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for row in self.data.chunks(self.cols.max(1)).take(8) {
            writeln!(f, "  {row:?}")?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}
