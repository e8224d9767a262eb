//! Dense row-major matrices and the handful of kernels the estimators need.
//!
//! Everything is `f64`; summation orders are fixed so that repeated runs
//! produce bit-identical results.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v`, accumulating left to right within each row.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// `self^T * v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "transpose_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            let row = self.row(i);
            for (o, x) in out.iter_mut().zip(row) {
                *o += vi * x;
            }
        }
        out
    }

    /// Gram matrix `self^T * self`, computed as a sum of row outer products.
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..p {
                let xj = row[j];
                if xj == 0.0 {
                    continue;
                }
                let out = &mut g.data[j * p..(j + 1) * p];
                for (k, o) in out.iter_mut().enumerate().skip(j) {
                    *o += xj * row[k];
                }
            }
        }
        // mirror the upper triangle
        for j in 0..p {
            for k in 0..j {
                g.data[j * p + k] = g.data[k * p + j];
            }
        }
        g
    }

    /// Columns of `self` restricted to `support`, as a new matrix.
    pub fn restrict_columns(&self, support: &[usize]) -> Matrix {
        let q = support.len();
        let mut m = Matrix::zeros(self.rows, q);
        for i in 0..self.rows {
            let row = self.row(i);
            for (c, &j) in support.iter().enumerate() {
                m.data[i * q + c] = row[j];
            }
        }
        m
    }

    /// Square submatrix on `idx x idx`.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Matrix {
        assert_eq!(self.rows, self.cols);
        let q = idx.len();
        let mut m = Matrix::zeros(q, q);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m.data[a * q + b] = self.get(i, j);
            }
        }
        m
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Lower-triangular Cholesky factor `L` with `L L^T = self`.
    pub fn cholesky(&self) -> Result<Matrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                d -= v * v;
            }
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: d, index: j });
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / dj);
            }
        }
        Ok(l)
    }

    /// Solve `self * x = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &[f64]) -> Result<Vec<f64>> {
        let l = self.cholesky()?;
        let n = self.rows;
        // forward solve L z = b
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for (k, &zk) in z.iter().enumerate().take(i) {
                s -= l.get(i, k) * zk;
            }
            z[i] = s / l.get(i, i);
        }
        // back solve L^T x = z
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for (k, &xk) in x.iter().enumerate().skip(i + 1) {
                s -= l.get(k, i) * xk;
            }
            x[i] = s / l.get(i, i);
        }
        Ok(x)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn naive_matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[i] += m.get(i, j) * v[j];
            }
        }
        out
    }

    fn naive_gram(m: &Matrix) -> Matrix {
        let p = m.cols();
        let mut g = Matrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                let mut s = 0.0;
                for i in 0..m.rows() {
                    s += m.get(i, j) * m.get(i, k);
                }
                g.set(j, k, s);
            }
        }
        g
    }

    fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, rng.standard_normal(rows * cols))
    }

    #[test]
    fn matvec_and_gram_match_triple_loop_reference() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 20, 20);
            let v = rng.standard_normal(20);

            let fast = m.matvec(&v);
            let slow = naive_matvec(&m, &v);
            for (a, b) in fast.iter().zip(&slow) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale <= 1e-12);
            }

            let g = m.gram();
            let gref = naive_gram(&m);
            for j in 0..20 {
                for k in 0..20 {
                    let scale = gref.get(j, k).abs().max(1.0);
                    assert!((g.get(j, k) - gref.get(j, k)).abs() / scale <= 1e-12);
                }
            }
            assert_eq!(g.max_abs_asymmetry(), 0.0);
        }
    }

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let mut rng = RngStream::new(11, 0);
        let a = random_matrix(&mut rng, 12, 6);
        let mut g = a.gram();
        for i in 0..6 {
            g.set(i, i, g.get(i, i) + 1e-3);
        }
        let l = g.cholesky().unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..6 {
                    s += l.get(i, k) * l.get(j, k);
                }
                assert!((s - g.get(i, j)).abs() <= 1e-10 * g.get(i, i).abs().max(1.0));
            }
            for j in (i + 1)..6 {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn solve_spd_recovers_known_solution() {
        let mut rng = RngStream::new(13, 0);
        let a = random_matrix(&mut rng, 15, 5);
        let mut g = a.gram();
        for i in 0..5 {
            g.set(i, i, g.get(i, i) + 0.5);
        }
        let x_true = rng.standard_normal(5);
        let b = g.matvec(&x_true);
        let x = g.solve_spd(&b).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            m.cholesky(),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
