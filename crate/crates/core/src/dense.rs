//! Dense kernels: LU with partial pivoting for subdomain and coarse solves,
//! and eigenvalue helpers used by validation code.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Matrices larger than this are refused by the dense eigen helpers.
pub const DENSE_LIMIT: usize = 2500;

const PIVOT_TOL: f64 = 1e-300;

/// LU factorization `P A = L U` stored compactly (unit lower triangle implied).
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` if a pivot vanishes or the input is non-finite.
    pub fn factor(a: ArrayView2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        // logical (row-major) order regardless of the input layout
        let mut lu: Vec<f64> = a.iter().copied().collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > PIVOT_TOL) || !best.is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    let (top, bottom) = lu.split_at_mut(i * n);
                    let krow = &top[k * n + k + 1..k * n + n];
                    let irow = &mut bottom[k + 1..n];
                    for (x, &y) in irow.iter_mut().zip(krow) {
                        *x -= f * y;
                    }
                }
            }
        }
        Some(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..i * n + n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A^T = U^T L^T P, so solve U^T y = b, L^T z = y, x = P^T z.
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[k * n + i] * y[k];
            }
            y[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lu[k * n + i] * y[k];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_block(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(b.raw_dim());
        let mut col = vec![0.0; self.n];
        for j in 0..b.ncols() {
            for (c, &v) in col.iter_mut().zip(b.column(j)) {
                *c = v;
            }
            self.solve_in_place(&mut col);
            for (o, &v) in out.column_mut(j).iter_mut().zip(&col) {
                *o = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.n;
        let mut inv = Array2::zeros((n, n));
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            for i in 0..n {
                inv[[i, j]] = e[i];
            }
        }
        inv
    }
}

pub fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check_limit(a: ArrayView2<f64>) -> Result<()> {
    let n = a.nrows().max(a.ncols());
    if n > DENSE_LIMIT {
        return Err(Error::SizeLimit { size: n, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_limit(a)?;
    let m = to_nalgebra(a);
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(a: ArrayView2<f64>) -> Result<f64> {
    check_limit(a)?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let m = to_nalgebra(a);
    let ev = m.complex_eigenvalues();
    Ok(ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest singular value, `sqrt(lambda_max(A^T A))`.
pub fn sigma_max(a: ArrayView2<f64>) -> Result<f64> {
    check_limit(a)?;
    let m = to_nalgebra(a);
    Ok(m.singular_values().iter().copied().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lu_solves_and_transposes() {
        let a = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 4.0]];
        let lu = Lu::factor(a.view()).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b);
        let r = a.dot(&ndarray::arr1(&x));
        for (ri, bi) in r.iter().zip(b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let xt = lu.solve_transpose(&b);
        let rt = a.t().dot(&ndarray::arr1(&xt));
        for (ri, bi) in rt.iter().zip(b) {
            assert!((ri - bi).abs() < 1e-12);
        }
        let inv = lu.inverse();
        let id = a.dot(&inv);
        for ((i, j), v) in id.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(Lu::factor(a.view()).is_none());
    }

    #[test]
    fn radius_differs_from_norm_for_nilpotent() {
        let t = array![[0.0, 1.0], [0.0, 0.0]];
        assert_eq!(spectral_radius(t.view()).unwrap(), 0.0);
        assert!((sigma_max(t.view()).unwrap() - 1.0).abs() < 1e-14);
    }
}
