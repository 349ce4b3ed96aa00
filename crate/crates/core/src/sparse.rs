//! Compressed sparse row storage with a fixed pattern and mutable values.
//!
//! Every sparse operator in the crate (the stiffness matrix, restrictions,
//! interpolation, normalized adjacencies) is carried by [`CsrMatrix`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and columns sorted within each row. Explicit zeros are kept.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r},{c}) out of range");
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..n_rows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: ArrayView2<f64>) -> Self {
        let mut trip = Vec::new();
        for ((i, j), &v) in a.indexed_iter() {
            if v != 0.0 {
                trip.push((i, j, v));
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &trip)
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_range(i).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_range(i)]
    }

    /// Position of `(i, j)` in the value array, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_range(i);
        self.col_idx[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        y
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_range(i) {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `y = A^T x`
    pub fn spmv_transpose(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_rows);
        let mut y = vec![0.0; self.n_cols];
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_range(i) {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }

    /// `Y = A X` for a dense block `X` with `n_cols` rows.
    pub fn spmm(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_cols, "spmm shape mismatch");
        let m = x.ncols();
        let mut y = Array2::<f64>::zeros((self.n_rows, m));
        for i in 0..self.n_rows {
            let mut yrow = y.row_mut(i);
            for k in self.row_range(i) {
                let v = self.values[k];
                yrow.scaled_add(v, &x.row(self.col_idx[k]));
            }
        }
        y
    }

    /// `Y = A^T X` for a dense block `X` with `n_rows` rows.
    pub fn spmm_transpose(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_rows, "spmm_transpose shape mismatch");
        let mut y = Array2::<f64>::zeros((self.n_cols, x.ncols()));
        for i in 0..self.n_rows {
            let xrow = x.row(i);
            for k in self.row_range(i) {
                y.row_mut(self.col_idx[k]).scaled_add(self.values[k], &xrow);
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.n_cols, self.n_rows, &trip)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.n_cols, other.n_rows, "matmul shape mismatch");
        let mut trip = Vec::new();
        let mut acc = vec![0.0; other.n_cols];
        let mut touched = vec![false; other.n_cols];
        let mut cols = Vec::new();
        for i in 0..self.n_rows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for &j in &cols {
                trip.push((i, j, acc[j]));
                acc[j] = 0.0;
                touched[j] = false;
            }
        }
        Self::from_triplets(self.n_rows, other.n_cols, &trip)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                d[[i, j]] += v;
            }
        }
        d
    }

    /// Same pattern, values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.nnz());
        Self { values, ..self.clone() }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        (0..self.n_rows).all(|i| {
            self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * (1.0 + v.abs()))
        })
    }

    /// Checks the structural invariants: monotone `row_ptr`, sorted unique
    /// columns within each row, and in-range indices.
    pub fn check_invariants(&self) -> bool {
        self.row_ptr.len() == self.n_rows + 1
            && self.row_ptr[0] == 0
            && self.row_ptr[self.n_rows] == self.nnz()
            && self.values.len() == self.nnz()
            && self.row_ptr.windows(2).all(|w| w[0] <= w[1])
            && (0..self.n_rows).all(|i| {
                let c = self.row_cols(i);
                c.windows(2).all(|w| w[0] < w[1]) && c.iter().all(|&j| j < self.n_cols)
            })
    }

    /// Matrix-market coordinate export (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |s| !s.starts_with('%')));
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix market".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let mut trip = Vec::with_capacity(dims[2]);
        for line in lines.take(dims[2]) {
            let line = line?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(Error::Parse(format!("bad entry `{line}`")));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad index `{s}`")));
            let v = t[2].parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{}`", t[2])))?;
            trip.push((p(t[0])? - 1, p(t[1])? - 1, v));
        }
        Ok(Self::from_triplets(dims[0], dims[1], &trip))
    }

    pub fn to_matrix_market_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
            }
        }
        s
    }
}

/// Allowed nonzero positions of a learned operator.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparsityPattern {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl SparsityPattern {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rows.iter().zip(&self.cols).any(|(&a, &b)| a == r && b == c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().copied().zip(self.cols.iter().copied())
    }

    /// CSR matrix with this pattern, rows sorted, all values set to `fill`.
    pub fn to_csr(&self, n_rows: usize, n_cols: usize, fill: f64) -> CsrMatrix {
        let trip: Vec<_> = self.iter().map(|(r, c)| (r, c, fill)).collect();
        CsrMatrix::from_triplets(n_rows, n_cols, &trip)
    }
}
