//! Small dense linear algebra: row-major matrices and Householder QR least squares.

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    /// Builds an `n x (k+1)` design matrix with a leading column of ones.
    pub fn with_intercept(columns: &[Vec<T>], n: usize) -> Self {
        let mut m = Self::zeros(n, columns.len() + 1);
        for i in 0..n {
            m[(i, 0)] = T::one();
            for (j, col) in columns.iter().enumerate() {
                m[(i, j + 1)] = col[i];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Householder QR of an `n x p` matrix (`n >= p`), keeping `R` and applying
/// the reflections to a right-hand side on the fly.
pub struct Qr<T> {
    /// Upper-triangular `p x p` factor.
    pub r: Matrix<T>,
    /// First `p` entries of `Q^T y`.
    pub qty: Vec<T>,
    /// Squared norm of the trailing `n - p` entries of `Q^T y` (the SSR).
    pub residual_ss: T,
}

pub fn householder_qr<T: Real>(x: &Matrix<T>, y: &[T]) -> Qr<T> {
    let (n, p) = (x.rows(), x.cols());
    assert!(n >= p, "need at least as many rows as columns");
    assert_eq!(y.len(), n);
    let mut a = x.clone();
    let mut b = y.to_vec();
    let mut v = vec![T::zero(); n];
    for k in 0..p {
        let mut alpha = T::zero();
        for i in k..n {
            alpha += a[(i, k)] * a[(i, k)];
        }
        let alpha = alpha.sqrt();
        if alpha == T::zero() {
            continue;
        }
        let sign = if a[(k, k)] >= T::zero() { T::one() } else { -T::one() };
        let u0 = a[(k, k)] + sign * alpha;
        for i in k..n {
            v[i] = a[(i, k)];
        }
        v[k] = u0;
        let vnorm2: T = (k..n).map(|i| v[i] * v[i]).sum();
        let two = T::of(2.0);
        for j in k..p {
            let s: T = (k..n).map(|i| v[i] * a[(i, j)]).sum();
            let f = two * s / vnorm2;
            for i in k..n {
                a[(i, j)] -= f * v[i];
            }
        }
        let s: T = (k..n).map(|i| v[i] * b[i]).sum();
        let f = two * s / vnorm2;
        for i in k..n {
            b[i] -= f * v[i];
        }
    }
    let mut r = Matrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            r[(i, j)] = a[(i, j)];
        }
    }
    let residual_ss = b[p..].iter().map(|&e| e * e).sum();
    b.truncate(p);
    Qr {
        r,
        qty: b,
        residual_ss,
    }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn solve_upper<T: Real>(r: &Matrix<T>, b: &[T]) -> Vec<T> {
    let p = r.rows();
    let mut x = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in i + 1..p {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Inverse of an upper-triangular matrix.
pub fn invert_upper<T: Real>(r: &Matrix<T>) -> Matrix<T> {
    let p = r.rows();
    let mut inv = Matrix::zeros(p, p);
    for col in 0..p {
        let mut e = vec![T::zero(); p];
        e[col] = T::one();
        let x = solve_upper(r, &e);
        for i in 0..p {
            inv[(i, col)] = x[i];
        }
    }
    inv
}

/// `(X^T X)^{-1} = R^{-1} R^{-T}` from the QR factor of `X`.
pub fn xtx_inverse<T: Real>(r: &Matrix<T>) -> Matrix<T> {
    let rinv = invert_upper(r);
    rinv.matmul(&rinv.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_solves_exact_system() {
        // y = 1 + 2 x
        let x = Matrix::with_intercept(&[vec![0.0f64, 1.0, 2.0, 3.0]], 4);
        let y = [1.0, 3.0, 5.0, 7.0];
        let qr = householder_qr(&x, &y);
        let beta = solve_upper(&qr.r, &qr.qty);
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert!((beta[1] - 2.0).abs() < 1e-12);
        assert!(qr.residual_ss < 1e-20);
    }

    #[test]
    fn xtx_inverse_matches_direct() {
        let x = Matrix::from_rows(&[
            vec![1.0f64, 2.0],
            vec![1.0, -1.0],
            vec![1.0, 0.5],
            vec![1.0, 3.0],
        ]);
        let qr = householder_qr(&x, &[0.0; 4]);
        let inv = xtx_inverse(&qr.r);
        let xtx = x.transpose().matmul(&x);
        let id = xtx.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
