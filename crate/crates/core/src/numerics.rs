//! Dense linear algebra over real and complex scalars.
//!
//! Matrices are stored row-major. Hermitian positive-definite systems are
//! handled through a lower Cholesky factor `L` with `L L^H = M`; inverses are
//! never formed explicitly.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiceError};
use crate::parallel::{self, Execution};

/// Field element usable by the dense kernels.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_real(x: f64) -> Self;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn abs(self) -> f64;
    fn abs2(self) -> f64;
    fn scale(self, s: f64) -> Self;
    fn is_finite(self) -> bool;

    /// `sum_i a_i * conj(b_i)`.
    fn dot_conj(a: &[Self], b: &[Self]) -> Self {
        a.iter()
            .zip(b)
            .fold(Self::zero(), |acc, (&x, &y)| acc + x * y.conj())
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    fn dot_conj(a: &[Self], b: &[Self]) -> Self {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let mut acc = [0.0f64; 4];
        let chunks = n / 4;
        for c in 0..chunks {
            let i = 4 * c;
            acc[0] += a[i] * b[i];
            acc[1] += a[i + 1] * b[i + 1];
            acc[2] += a[i + 2] * b[i + 2];
            acc[3] += a[i + 3] * b[i + 3];
        }
        let mut tail = 0.0;
        for i in 4 * chunks..n {
            tail += a[i] * b[i];
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn abs(self) -> f64 {
        self.norm()
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    // Two independent (re, im) accumulator pairs break the add dependency
    // chain; this is the kernel behind the Gram products and Cholesky.
    fn dot_conj(a: &[Self], b: &[Self]) -> Self {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let (mut re0, mut im0, mut re1, mut im1) = (0.0, 0.0, 0.0, 0.0);
        let pairs = n / 2;
        for c in 0..pairs {
            let i = 2 * c;
            let (x0, y0) = (a[i], b[i]);
            let (x1, y1) = (a[i + 1], b[i + 1]);
            re0 += x0.re * y0.re + x0.im * y0.im;
            im0 += x0.im * y0.re - x0.re * y0.im;
            re1 += x1.re * y1.re + x1.im * y1.im;
            im1 += x1.im * y1.re - x1.re * y1.im;
        }
        if n % 2 == 1 {
            let (x, y) = (a[n - 1], b[n - 1]);
            re0 += x.re * y.re + x.im * y.im;
            im0 += x.im * y.re - x.re * y.im;
        }
        Complex64::new(re0 + re1, im0 + im1)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type ComplexMatrix = DenseMatrix<Complex64>;
pub type RealMatrix = DenseMatrix<f64>;

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SpiceError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs2()).sum::<f64>().sqrt()
    }

    /// Conjugate symmetry within `rel_tol` of the largest entry.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self
            .data
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        for i in 0..self.rows {
            for j in 0..=i {
                if (self[(i, j)] - self[(j, i)].conj()).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        self.mul_vec_with(x, Execution::Sequential)
    }

    /// `A x`, rows dispatched according to `exec`.
    pub fn mul_vec_with(&self, x: &[T], exec: Execution) -> Result<Vec<T>> {
        check_len(self.cols, x.len())?;
        Ok(parallel::map_range(self.rows, exec, |i| {
            self.row(i)
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        }))
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        check_len(self.rows, x.len())?;
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * xi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_len(self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[p * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_len(self.rows, other.rows)?;
        check_len(self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// `B B^H + diag(d)` for this matrix `B`, filling the lower triangle row
    /// by row and mirroring. Cost `rows^2 * cols / 2`.
    pub fn gram_plus_diagonal(&self, diag: &[f64], exec: Execution) -> Result<Self> {
        check_len(self.rows, diag.len())?;
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        parallel::for_each_row_mut(&mut out.data, n, exec, |m, row| {
            let bm = self.row(m);
            for (q, slot) in row.iter_mut().enumerate().take(m + 1) {
                *slot = T::dot_conj(bm, self.row(q));
            }
            row[m] = T::from_real(row[m].re() + diag[m]);
        });
        for m in 0..n {
            for q in 0..m {
                out.data[q * n + m] = out.data[m * n + q].conj();
            }
        }
        Ok(out)
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(SpiceError::DimensionMismatch { expected, found })
    }
}

pub fn norm2<T: Scalar>(x: &[T]) -> f64 {
    norm2_sq(x).sqrt()
}

pub fn norm2_sq<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs2()).sum()
}

pub fn norm1<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

pub fn norm_inf<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// `x^H y`.
pub fn inner<T: Scalar>(x: &[T], y: &[T]) -> T {
    T::dot_conj(y, x)
}

/// Diagonal regularization used when a leading minor breaks down.
///
/// The first retry adds `relative * trace(M) / dim` to the diagonal; each
/// further retry multiplies the shift by `growth`, up to `max_escalations`
/// additional attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub relative: f64,
    pub growth: f64,
    pub max_escalations: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            relative: 1e-12,
            growth: 10.0,
            max_escalations: 3,
        }
    }
}

impl JitterPolicy {
    /// Never regularize; breakdown is an immediate error.
    pub fn none() -> Self {
        Self {
            relative: 0.0,
            growth: 1.0,
            max_escalations: 0,
        }
    }
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix, possibly
/// of `M + jitter * I`.
#[derive(Debug, Clone)]
pub struct HermitianFactorization<T> {
    factor: DenseMatrix<T>,
    jitter_applied: f64,
}

/// Factors `M` (only its lower triangle is read), retrying with diagonal
/// jitter per `policy` on breakdown.
pub fn factor_hpd<T: Scalar>(
    m: &DenseMatrix<T>,
    policy: &JitterPolicy,
) -> Result<HermitianFactorization<T>> {
    if !m.is_square() {
        return Err(SpiceError::DimensionMismatch {
            expected: m.rows,
            found: m.cols,
        });
    }
    let n = m.rows;
    if n == 0 {
        return Err(SpiceError::EmptyGrid);
    }
    if let Some(factor) = cholesky_lower(m, 0.0) {
        return Ok(HermitianFactorization {
            factor,
            jitter_applied: 0.0,
        });
    }
    let base = policy.relative * (m.trace().re() / n as f64).abs();
    let mut jitter = base;
    if base > 0.0 && base.is_finite() {
        for _ in 0..=policy.max_escalations {
            if let Some(factor) = cholesky_lower(m, jitter) {
                return Ok(HermitianFactorization {
                    factor,
                    jitter_applied: jitter,
                });
            }
            jitter *= policy.growth;
        }
        jitter /= policy.growth;
    }
    Err(SpiceError::NonFactorizable { dim: n, jitter })
}

fn cholesky_lower<T: Scalar>(m: &DenseMatrix<T>, shift: f64) -> Option<DenseMatrix<T>> {
    let n = m.rows;
    let mut l = DenseMatrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (head, tail) = l.data.split_at_mut(i * n);
            let li = &tail[..j];
            let s = if i == j {
                let d = m[(i, i)].re() + shift - norm2_sq(li);
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                T::from_real(d.sqrt())
            } else {
                let lj = &head[j * n..j * n + j];
                let djj = head[j * n + j].re();
                (m[(i, j)] - T::dot_conj(li, lj)).scale(1.0 / djj)
            };
            if !s.is_finite() {
                return None;
            }
            tail[j] = s;
        }
    }
    Some(l)
}

impl<T: Scalar> HermitianFactorization<T> {
    pub fn factor(&self) -> &DenseMatrix<T> {
        &self.factor
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }

    /// `L L^H`, i.e. the factored (jittered) matrix.
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let n = self.dim();
        DenseMatrix::from_fn(n, n, |i, j| {
            let k = i.min(j) + 1;
            T::dot_conj(&self.factor.row(i)[..k], &self.factor.row(j)[..k])
        })
    }

    /// Solves `L u = b`.
    pub fn forward_solve(&self, b: &[T]) -> Result<Vec<T>> {
        check_len(self.dim(), b.len())?;
        let mut u = b.to_vec();
        for i in 0..self.dim() {
            let row = self.factor.row(i);
            let acc = row[..i]
                .iter()
                .zip(&u[..i])
                .fold(T::zero(), |acc, (&l, &x)| acc + l * x);
            u[i] = (u[i] - acc).scale(1.0 / row[i].re());
        }
        Ok(u)
    }

    /// Solves `L^H x = u`.
    pub fn backward_solve(&self, u: &[T]) -> Result<Vec<T>> {
        check_len(self.dim(), u.len())?;
        let mut x = u.to_vec();
        for i in (0..self.dim()).rev() {
            let row = self.factor.row(i);
            let xi = x[i].scale(1.0 / row[i].re());
            x[i] = xi;
            for (xp, &l) in x[..i].iter_mut().zip(&row[..i]) {
                *xp -= l.conj() * xi;
            }
        }
        Ok(x)
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let u = self.forward_solve(b)?;
        self.backward_solve(&u)
    }

    /// `b^H M^{-1} b = ||L^{-1} b||^2`.
    pub fn quadratic_form(&self, b: &[T]) -> Result<f64> {
        Ok(norm2_sq(&self.forward_solve(b)?))
    }
}

/// Convenience wrapper matching the crate's free-function style.
pub fn solve_hpd<T: Scalar>(f: &HermitianFactorization<T>, b: &[T]) -> Result<Vec<T>> {
    f.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hpd(n: usize, k: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = ComplexMatrix::from_fn(n, k, |_, _| {
            c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        b.gram_plus_diagonal(&vec![0.25; n], Execution::Sequential)
            .unwrap()
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = factor_hpd(&ComplexMatrix::identity(4), &JitterPolicy::default()).unwrap();
        assert_eq!(f.factor(), &ComplexMatrix::identity(4));
        assert_eq!(f.jitter_applied(), 0.0);
    }

    #[test]
    fn diagonal_factor_is_sqrt() {
        let m = ComplexMatrix::from_diagonal(&[c(4.0, 0.0), c(9.0, 0.0)]);
        let f = factor_hpd(&m, &JitterPolicy::default()).unwrap();
        assert_eq!(f.factor()[(0, 0)], c(2.0, 0.0));
        assert_eq!(f.factor()[(1, 1)], c(3.0, 0.0));
        assert_eq!(f.factor()[(1, 0)], c(0.0, 0.0));
    }

    #[test]
    fn diagonal_solve() {
        let m = ComplexMatrix::from_diagonal(&[c(2.0, 0.0), c(4.0, 0.0)]);
        let f = factor_hpd(&m, &JitterPolicy::default()).unwrap();
        let x = solve_hpd(&f, &[c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);

        let y = vec![c(0.3, -1.0), c(2.0, 0.5), c(-0.1, 0.0)];
        let fi = factor_hpd(&ComplexMatrix::identity(3), &JitterPolicy::default()).unwrap();
        assert_eq!(fi.solve(&y).unwrap(), y);
    }

    #[test]
    fn reconstruction_of_covariance_like_matrix() {
        for seed in 0..5 {
            let m = random_hpd(12, 30, seed);
            let f = factor_hpd(&m, &JitterPolicy::default()).unwrap();
            assert_eq!(f.jitter_applied(), 0.0);
            let err = f.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            assert!(err < 1e-10, "reconstruction error {err}");
        }
    }

    #[test]
    fn solve_multiplies_back() {
        let m = random_hpd(10, 4, 7);
        let f = factor_hpd(&m, &JitterPolicy::default()).unwrap();
        let b: Vec<_> = (0..10).map(|i| c(i as f64, 1.0 - i as f64)).collect();
        let x = f.solve(&b).unwrap();
        let mx = m.mul_vec(&x).unwrap();
        let res: Vec<_> = mx.iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm2(&res) / norm2(&b) < 1e-9);
        let q = f.quadratic_form(&b).unwrap();
        assert!((q - inner(&b, &x).re).abs() < 1e-9 * q);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = factor_hpd(&ComplexMatrix::identity(3), &JitterPolicy::default()).unwrap();
        assert!(matches!(
            f.solve(&[c(1.0, 0.0)]),
            Err(SpiceError::DimensionMismatch {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        // rank one: a a^H
        let a = [c(1.0, 0.0), c(0.0, 1.0), c(1.0, 1.0)];
        let m = ComplexMatrix::from_fn(3, 3, |i, j| a[i] * a[j].conj());
        let f = factor_hpd(&m, &JitterPolicy::default()).unwrap();
        assert!(f.jitter_applied() > 0.0);
        let shifted = {
            let mut s = m.clone();
            for i in 0..3 {
                s[(i, i)] += c(f.jitter_applied(), 0.0);
            }
            s
        };
        let err = f.reconstruct().sub(&shifted).unwrap().frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_not_factorizable() {
        let m = ComplexMatrix::from_diagonal(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        assert!(matches!(
            factor_hpd(&m, &JitterPolicy::default()),
            Err(SpiceError::NonFactorizable { dim: 2, .. })
        ));
        let z = ComplexMatrix::zeros(2, 2);
        assert!(factor_hpd(&z, &JitterPolicy::default()).is_err());
        assert!(factor_hpd(&ComplexMatrix::zeros(2, 3), &JitterPolicy::default()).is_err());
    }

    #[test]
    fn real_kernels_match_complex() {
        let m = RealMatrix::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let f = factor_hpd(&m, &JitterPolicy::none()).unwrap();
        let x = f.solve(&[6.0, 6.0, 6.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gram_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ComplexMatrix::from_fn(5, 7, |_, _| c(rng.random(), rng.random()));
        let d = [0.1, 0.2, 0.3, 0.4, 0.5];
        let g = b.gram_plus_diagonal(&d, Execution::Parallel).unwrap();
        let naive = b.matmul(&b.conj_transpose()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = naive[(i, j)] + if i == j { c(d[i], 0.0) } else { c(0.0, 0.0) };
                assert!((g[(i, j)] - want).norm() < 1e-13);
            }
        }
        assert!(g.is_hermitian(1e-12));
        assert_eq!(g, b.gram_plus_diagonal(&d, Execution::Sequential).unwrap());
    }

    #[test]
    fn adjoint_product_matches_transpose() {
        let b = ComplexMatrix::from_fn(3, 2, |i, j| c(i as f64, j as f64 + 1.0));
        let x = [c(1.0, 1.0), c(0.0, -2.0), c(3.0, 0.5)];
        let direct = b.adjoint_mul_vec(&x).unwrap();
        let via = b.conj_transpose().mul_vec(&x).unwrap();
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
