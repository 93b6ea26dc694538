//! Small dense helpers around a row-major design matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major dense matrix; rows are subjects, columns are design terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "row matrix buffer size");
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.data[i * self.ncols + j]).collect()
    }

    /// `out[i] = row_i · coef`
    pub fn mul_vec_into(&self, coef: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.ncols)) {
            *o = dot(row, coef);
        }
    }

    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.mul_vec_into(coef, &mut out);
        out
    }

    /// `Σ_i v_i row_i`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (&vi, row) in v.iter().zip(self.data.chunks_exact(self.ncols)) {
            if vi == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(row) {
                *o += vi * x;
            }
        }
        out
    }

    /// `Σ_i w_i row_i row_i'` as a packed symmetric row-major buffer.
    pub fn weighted_gram_buf(&self, w: &[f64], out: &mut [f64]) {
        let q = self.ncols;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            let r = self.row(i);
            for (&xj, acc) in r.iter().zip(out.chunks_exact_mut(q)) {
                let wx = wi * xj;
                if wx == 0.0 {
                    continue;
                }
                for (o, &xk) in acc.iter_mut().zip(r) {
                    *o += wx * xk;
                }
            }
        }
        for j in 0..q {
            for k in 0..j {
                let v = 0.5 * (out[j * q + k] + out[k * q + j]);
                out[j * q + k] = v;
                out[k * q + j] = v;
            }
        }
    }

    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let q = self.ncols;
        let mut buf = vec![0.0; q * q];
        self.weighted_gram_buf(w, &mut buf);
        DMatrix::from_row_slice(q, q, &buf)
    }

    /// Numerical rank from a column-pivoted QR with relative pivot threshold
    /// `rel_tol`. Tall matrices are first reduced to their `R` factor block by
    /// block, which preserves column norms and singular values.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let q = self.ncols;
        if q == 0 {
            return 0;
        }
        let r = if self.nrows <= 4 * q.max(64) {
            DMatrix::from_row_slice(self.nrows, q, &self.data)
        } else {
            const BLOCK: usize = 1024;
            let mut r = DMatrix::<f64>::zeros(0, q);
            for start in (0..self.nrows).step_by(BLOCK) {
                let end = (start + BLOCK).min(self.nrows);
                let block =
                    DMatrix::from_row_slice(end - start, q, &self.data[start * q..end * q]);
                let stacked = {
                    let mut m = DMatrix::zeros(r.nrows() + block.nrows(), q);
                    m.rows_mut(0, r.nrows()).copy_from(&r);
                    m.rows_mut(r.nrows(), block.nrows()).copy_from(&block);
                    m
                };
                r = stacked.qr().r();
            }
            r
        };
        let piv = r.col_piv_qr();
        let rr = piv.r();
        let k = rr.nrows().min(rr.ncols());
        let diag: Vec<f64> = (0..k).map(|i| rr[(i, i)].abs()).collect();
        let top = diag.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return 0;
        }
        diag.iter().filter(|&&d| d > rel_tol * top).count()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &[f64], what: &str) -> Result<Vec<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let x = chol.solve(&DVector::from_column_slice(b));
    Ok(x.iter().copied().collect())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
