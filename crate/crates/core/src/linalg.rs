//! Small dense matrices over a pluggable real scalar.
//!
//! Output covariances near an exceptional point on the oscillation threshold
//! reach condition numbers of 1e18–1e24, beyond what `f64` can resolve, so the
//! Fisher pipeline runs on double-double [`Ext`] numbers. Everything here is
//! generic over [`Real`] so the same code also runs in plain `f64`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::DMatrix;

/// Double-double scalar (about 32 significant digits).
pub use qd::Quad as Ext;

/// Scalar field used by [`Mat`].
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Real for Ext {
    fn from_f64(x: f64) -> Self {
        Ext::from(x)
    }
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    fn abs(self) -> Self {
        Ext::abs(self)
    }
    fn sqrt(self) -> Self {
        if self.0 == 0.0 {
            return Ext::ZERO;
        }
        Ext::sqrt(self)
    }
    fn is_finite(self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
}

/// Returned when a factorisation meets an exactly zero (or non-positive) pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularMatrix;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from `f64` rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::from_fn(rows.len(), cols, |i, j| T::from_f64(rows[i][j]))
    }

    pub fn from_diag(d: &[T]) -> Self {
        let n = d.len();
        Self::from_fn(n, n, |i, j| if i == j { d[i] } else { T::zero() })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let prod = a * rhs[(k, j)];
                    out[(i, j)] += prod;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..self.cols {
                    acc += self[(i, j)] * v[j];
                }
                acc
            })
            .collect()
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// `diag(d) * self`
    pub fn scale_rows(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.rows);
        Self::from_fn(self.rows, self.cols, |i, j| d[i] * self[(i, j)])
    }

    /// `self * diag(d)`
    pub fn scale_cols(&self, d: &[T]) -> Self {
        assert_eq!(d.len(), self.cols);
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * d[j])
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        Self::from_fn(self.rows * rhs.rows, self.cols * rhs.cols, |i, j| {
            self[(i / rhs.rows, j / rhs.cols)] * rhs[(i % rhs.rows, j % rhs.cols)]
        })
    }

    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn trace(&self) -> T {
        let mut t = T::zero();
        for i in 0..self.rows.min(self.cols) {
            t += self[(i, i)];
        }
        t
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].to_f64().abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self + selfᵀ`
    pub fn plus_transpose(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + self[(j, i)])
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect() }
    }

    pub fn to_f64(&self) -> Mat<f64> {
        self.cast()
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].to_f64())
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| T::from_f64(m[(i, j)]))
    }

    pub fn lu(&self) -> Result<Lu<T>, SingularMatrix> {
        Lu::new(self)
    }

    pub fn inverse(&self) -> Result<Self, SingularMatrix> {
        Ok(self.lu()?.inverse())
    }

    pub fn det(&self) -> T {
        self.lu().map_or(T::zero(), |lu| lu.det())
    }

    pub fn cholesky(&self) -> Result<Cholesky<T>, SingularMatrix> {
        Cholesky::new(self)
    }

    /// 1-norm condition number, `inf` for an exactly singular matrix.
    pub fn cond_one(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => self.norm_one() * inv.norm_one(),
            Err(_) => f64::INFINITY,
        }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Real> Add for &Mat<T> {
    type Output = Mat<T>;
    fn add(self, rhs: Self) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] + rhs[(i, j)])
    }
}

impl<T: Real> Sub for &Mat<T> {
    type Output = Mat<T>;
    fn sub(self, rhs: Self) -> Mat<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - rhs[(i, j)])
    }
}

impl<T: Real> Mul for &Mat<T> {
    type Output = Mat<T>;
    fn mul(self, rhs: Self) -> Mat<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Neg for &Mat<T> {
    type Output = Mat<T>;
    fn neg(self) -> Mat<T> {
        self.map(|x| -x)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Mat<T>,
    perm: Vec<usize>,
    sign: f64,
}

impl<T: Real> Lu<T> {
    fn new(a: &Mat<T>) -> Result<Self, SingularMatrix> {
        assert!(a.is_square(), "LU of a non-square matrix");
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(SingularMatrix);
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let d = f * lu[(k, j)];
                    lu[(i, j)] -= d;
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let d = self.lu[(i, k)] * x[k];
                x[i] -= d;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let d = self.lu[(i, k)] * x[k];
                x[i] -= d;
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &Mat<T>) -> Mat<T> {
        let mut out = Mat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            let col: Vec<T> = (0..b.rows).map(|i| b[(i, j)]).collect();
            for (i, v) in self.solve_vec(&col).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<T> {
        self.solve(&Mat::identity(self.lu.rows))
    }

    pub fn det(&self) -> T {
        let mut d = T::from_f64(self.sign);
        for i in 0..self.lu.rows {
            d *= self.lu[(i, i)];
        }
        d
    }
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Real> Cholesky<T> {
    fn new(a: &Mat<T>) -> Result<Self, SingularMatrix> {
        assert!(a.is_square(), "Cholesky of a non-square matrix");
        let n = a.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(SingularMatrix);
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &Mat<T> {
        &self.l
    }

    /// `L⁻¹ b`
    pub fn whiten_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let d = self.l[(i, k)] * x[k];
                x[i] -= d;
            }
            x[i] = x[i] / self.l[(i, i)];
        }
        x
    }

    /// `L⁻¹ B L⁻ᵀ` for symmetric `B`.
    pub fn whiten_sym(&self, b: &Mat<T>) -> Mat<T> {
        let n = self.l.rows;
        let mut half = Mat::zeros(n, n);
        for j in 0..n {
            let col: Vec<T> = (0..n).map(|i| b[(i, j)]).collect();
            for (i, v) in self.whiten_vec(&col).into_iter().enumerate() {
                half[(i, j)] = v;
            }
        }
        // (L⁻¹ B) L⁻ᵀ = (L⁻¹ (L⁻¹ B)ᵀ)ᵀ
        let ht = half.transpose();
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            let col: Vec<T> = (0..n).map(|i| ht[(i, j)]).collect();
            for (i, v) in self.whiten_vec(&col).into_iter().enumerate() {
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<T> {
        let n = self.l.rows;
        let linv = {
            let mut m = Mat::zeros(n, n);
            for j in 0..n {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                for (i, v) in self.whiten_vec(&e).into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            m
        };
        linv.transpose().matmul(&linv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ext_keeps_digits_f64_loses() {
        let third = Ext::ONE / Ext::from(3.0);
        let r = third * Ext::from(3.0) - Ext::ONE;
        assert!(r.to_f64().abs() < 1e-30);
    }

    #[test]
    fn lu_inverse_roundtrip() {
        let a: Mat<Ext> = Mat::from_rows(&[&[4.0, 1.0, 2.0], &[1.0, 3.0, 0.5], &[2.0, 0.5, 5.0]]);
        let inv = a.inverse().unwrap();
        let err = (&a.matmul(&inv) - &Mat::identity(3)).max_abs();
        assert!(err < 1e-30, "{err}");
    }

    #[test]
    fn det_of_permutation_has_sign() {
        let p: Mat<f64> = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(p.det(), -1.0);
    }

    #[test]
    fn singular_is_reported() {
        let a: Mat<f64> = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(a.lu().unwrap_err(), SingularMatrix);
        assert_eq!(a.cond_one(), f64::INFINITY);
    }

    #[test]
    fn cholesky_whitening_matches_inverse() {
        let a: Mat<Ext> = Mat::from_rows(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 0.5], &[0.0, 0.5, 2.0]]);
        let ch = a.cholesky().unwrap();
        let b: Mat<Ext> = Mat::from_rows(&[&[1.0, 2.0, 0.0], &[2.0, 0.0, 1.0], &[0.0, 1.0, 3.0]]);
        let w = ch.whiten_sym(&b);
        let inv = a.inverse().unwrap();
        // tr(W²) = tr(A⁻¹ B A⁻¹ B)
        let lhs = w.matmul(&w).trace().to_f64();
        let rhs = inv.matmul(&b).matmul(&inv).matmul(&b).trace().to_f64();
        assert!((lhs - rhs).abs() < 1e-14 * rhs.abs());
        let e = (&ch.inverse() - &inv).max_abs();
        assert!(e < 1e-30);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a: Mat<f64> = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn kron_with_identity_is_block_diagonal() {
        let b: Mat<f64> = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = Mat::identity(2).kron(&b);
        assert_eq!(k.block(2, 2, 2, 2), b);
        assert_eq!(k.block(0, 2, 2, 2), Mat::zeros(2, 2));
    }
}
