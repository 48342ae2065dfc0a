//! Small dense symmetric linear algebra.
//!
//! Every Gram-like quantity in the protocols (synced Gram `S`, local delta
//! `U`, composed `V`, staged `(d+1)x(d+1)` blocks, tree node noise) is a
//! [`SymMatrix`]. Storage is full row-major and every mutation writes both
//! triangles with the same value, so `m[i][j] == m[j][i]` holds bitwise.
//!
//! Dimensions are small (d <= 30), so there is no sparse path and solves are
//! recomputed from a fresh Cholesky factor.

use std::ops::{Deref, DerefMut, Index};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} is {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("quadratic form is negative ({0}); matrix is not PSD")]
    NegativeQuadraticForm(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
}

/// Quadratic forms below this are treated as a PSD violation rather than
/// rounding noise.
pub const NEGATIVE_QUAD_TOL: f64 = 1e-12;

/// Relative tolerance for PSD checks: `min_eig >= -PSD_REL_TOL * |trace|`.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    pub fn zeros(d: usize) -> Self {
        Self(vec![T::zero(); d])
    }

    /// Standard basis vector `e_i` in dimension `d`.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = Self::zeros(d);
        v.0[i] = T::one();
        v
    }

    pub fn from_vec(entries: Vec<T>) -> Self {
        Self(entries)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, &v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        Self(self.0.iter().map(|&v| v * a).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Vector<U> {
        Vector(self.0.iter().map(|v| U::lit(v.to_f64_lossy())).collect())
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T: Scalar> From<Vec<T>> for Vector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

/// General (not necessarily symmetric) square matrix. Only used as the raw
/// input to [`symmetrize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, LinalgError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(LinalgError::DimensionMismatch { expected: n, found: row.len() });
            }
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }
}

/// Dense symmetric matrix with both triangles stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, c: T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Accepts a row list only if it is square and exactly symmetric.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self, LinalgError> {
        let sq = SquareMatrix::from_rows(rows)?;
        let n = sq.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                if sq.get(i, j) != sq.get(j, i) {
                    return Err(LinalgError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { n, data: sq.data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    /// Writes `v` into both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise triangle equality.
    pub fn is_exactly_symmetric(&self) -> bool {
        (0..self.n).all(|i| ((i + 1)..self.n).all(|j| self.get(i, j).to_bits_eq(self.get(j, i))))
    }

    fn check_dim(&self, other: usize) -> Result<(), LinalgError> {
        if self.n == other {
            Ok(())
        } else {
            Err(LinalgError::DimensionMismatch { expected: self.n, found: other })
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.n, other.n);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn add_diagonal(&mut self, c: T) {
        for i in 0..self.n {
            self.data[i * self.n + i] += c;
        }
    }

    pub fn with_added_diagonal(&self, c: T) -> Self {
        let mut out = self.clone();
        out.add_diagonal(c);
        out
    }

    /// `self += w * x xᵀ`, computing each product once for both triangles.
    pub fn add_outer_assign(&mut self, x: &[T], w: T) -> Result<(), LinalgError> {
        self.check_dim(x.len())?;
        for i in 0..self.n {
            let wi = w * x[i];
            for j in i..self.n {
                let v = self.get(i, j) + wi * x[j];
                self.set(i, j, v);
            }
        }
        Ok(())
    }

    pub fn mul_vec(&self, x: &[T]) -> Vector<T> {
        debug_assert_eq!(self.n, x.len());
        Vector::from_vec(
            (0..self.n)
                .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
                .collect(),
        )
    }

    pub fn quad_form(&self, x: &[T]) -> T {
        debug_assert_eq!(self.n, x.len());
        let mut acc = T::zero();
        for i in 0..self.n {
            let row: T = self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum();
            acc += x[i] * row;
        }
        acc
    }

    /// Leading `k x k` block.
    pub fn top_left(&self, k: usize) -> Self {
        assert!(k <= self.n);
        Self::from_upper_fn(k, |i, j| self.get(i, j))
    }

    /// First `k` entries of column `col`.
    pub fn column_head(&self, col: usize, k: usize) -> Vector<T> {
        Vector::from_vec((0..k).map(|i| self.get(i, col)).collect())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cholesky(&self) -> Result<Cholesky<T>, LinalgError> {
        Cholesky::factor(self)
    }

    /// Eigenvalues in ascending order (cyclic Jacobi).
    pub fn eigenvalues(&self) -> Vec<T> {
        jacobi_eigenvalues(self)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues().first().copied().unwrap_or_else(T::zero)
    }

    /// Operator (spectral) norm, `max |λ|`.
    pub fn spectral_norm(&self) -> T {
        self.eigenvalues().iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// PSD up to `PSD_REL_TOL * |trace|`.
    pub fn is_psd(&self) -> bool {
        let tol = T::lit(PSD_REL_TOL) * self.trace().abs();
        self.min_eigenvalue() >= -tol
    }

    pub fn cast<U: Scalar>(&self) -> SymMatrix<U> {
        SymMatrix { n: self.n, data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect() }
    }
}

impl<T: Scalar> Index<(usize, usize)> for SymMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // integer_decode is exact for both f32 and f64
        self.integer_decode() == other.integer_decode()
    }
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

/// Dimensions up to this use stack scratch space in hot solves.
const STACK_DIM: usize = 32;

impl<T: Scalar> Cholesky<T> {
    pub fn factor(m: &SymMatrix<T>) -> Result<Self, LinalgError> {
        let n = m.dim();
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut diag = m.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: diag.to_f64_lossy() });
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn logdet(&self) -> T {
        let two = T::lit(2.0);
        (0..self.n).map(|i| two * self.l[i * self.n + i].ln()).sum()
    }

    /// Solves `L z = b` into `z`.
    fn forward_into(&self, b: &[T], z: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * z[k];
            }
            z[i] = s / self.l[i * n + i];
        }
    }

    fn forward(&self, b: &[T]) -> Vec<T> {
        let mut z = vec![T::zero(); self.n];
        self.forward_into(b, &mut z);
        z
    }

    pub fn solve(&self, b: &[T]) -> Result<Vector<T>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, found: b.len() });
        }
        let n = self.n;
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        Ok(Vector::from_vec(x))
    }

    /// `xᵀ m⁻¹ x`, nonnegative by construction.
    pub fn inv_quad(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.n);
        if self.n <= STACK_DIM {
            let mut z = [T::zero(); STACK_DIM];
            self.forward_into(x, &mut z[..self.n]);
            z[..self.n].iter().map(|&v| v * v).sum()
        } else {
            self.forward(x).iter().map(|&v| v * v).sum()
        }
    }

    /// `‖x‖_{m⁻¹}`
    pub fn inv_norm(&self, x: &[T]) -> T {
        self.inv_quad(x).sqrt()
    }
}

fn jacobi_eigenvalues<T: Scalar>(m: &SymMatrix<T>) -> Vec<T> {
    let n = m.dim();
    let mut a: Vec<T> = (0..n * n).map(|k| m.get(k / n, k % n)).collect();
    let total: T = a.iter().map(|&v| v * v).sum();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

/// `ln det(m)` via Cholesky; fails loudly on non-PD input.
pub fn logdet<T: Scalar>(m: &SymMatrix<T>) -> Result<T, LinalgError> {
    Ok(m.cholesky()?.logdet())
}

/// Solves `v θ = u` for positive-definite `v`.
pub fn solve_psd<T: Scalar>(v: &SymMatrix<T>, u: &Vector<T>) -> Result<Vector<T>, LinalgError> {
    if u.dim() != v.dim() {
        return Err(LinalgError::DimensionMismatch { expected: v.dim(), found: u.dim() });
    }
    v.cholesky()?.solve(u)
}

/// `sqrt(xᵀ m x)`.
pub fn ellipsoid_norm<T: Scalar>(x: &Vector<T>, m: &SymMatrix<T>) -> Result<T, LinalgError> {
    if x.dim() != m.dim() {
        return Err(LinalgError::DimensionMismatch { expected: m.dim(), found: x.dim() });
    }
    let q = m.quad_form(x);
    if q < -T::lit(NEGATIVE_QUAD_TOL) {
        return Err(LinalgError::NegativeQuadraticForm(q.to_f64_lossy()));
    }
    Ok(q.max(T::zero()).sqrt())
}

/// `g + x xᵀ`
pub fn rank_one_update<T: Scalar>(g: &SymMatrix<T>, x: &Vector<T>) -> Result<SymMatrix<T>, LinalgError> {
    let mut out = g.clone();
    out.add_outer_assign(x, T::one())?;
    Ok(out)
}

/// `(n + nᵀ) / √2`
pub fn symmetrize<T: Scalar>(n: &SquareMatrix<T>) -> SymMatrix<T> {
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    SymMatrix::from_upper_fn(n.dim(), |i, j| (n.get(i, j) + n.get(j, i)) * inv_sqrt2)
}

pub fn min_eigenvalue<T: Scalar>(m: &SymMatrix<T>) -> T {
    m.min_eigenvalue()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, seed: u64) -> SymMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = SquareMatrix::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        // AᵀA + 0.1 I
        let mut m = SymMatrix::from_upper_fn(n, |i, j| (0..n).map(|k| a.get(k, i) * a.get(k, j)).sum());
        m.add_diagonal(0.1);
        m
    }

    fn nalgebra_eigs(m: &SymMatrix<f64>) -> Vec<f64> {
        let n = m.dim();
        let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m.get(i, j));
        let mut e: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn logdet_identity_and_diagonal() {
        assert_eq!(logdet(&SymMatrix::<f64>::identity(3)).unwrap(), 0.0);
        let v = logdet(&SymMatrix::diagonal(&[2.0, 2.0])).unwrap();
        assert_relative_eq!(v, 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(v, 1.386294, epsilon = 1e-6);
    }

    #[test]
    fn logdet_matches_eigen_oracle() {
        let m = random_pd(5, 7);
        let oracle: f64 = nalgebra_eigs(&m).iter().map(|e| e.ln()).sum();
        assert!((logdet(&m).unwrap() - oracle).abs() <= 1e-9);
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let m = SymMatrix::diagonal(&[1.0, -1.0]);
        assert!(matches!(logdet(&m), Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn solve_small_cases() {
        let u = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(solve_psd(&SymMatrix::identity(3), &u).unwrap(), u);
        let two_e1 = Vector::basis(3, 0).scaled(2.0);
        let x = solve_psd(&SymMatrix::scaled_identity(3, 2.0), &two_e1).unwrap();
        assert!(x.sub(&Vector::basis(3, 0)).norm() <= 1e-15);
    }

    #[test]
    fn solve_residual_oracle() {
        for seed in 0..20 {
            let v = random_pd(6, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let u = Vector::from_vec((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let theta = solve_psd(&v, &u).unwrap();
            let resid = v.mul_vec(&theta).sub(&u).norm() / u.norm();
            assert!(resid <= 1e-10, "seed {seed}: residual {resid}");
        }
    }

    #[test]
    fn solve_rejects_dimension_mismatch() {
        let err = solve_psd(&SymMatrix::<f64>::identity(3), &Vector::zeros(2)).unwrap_err();
        assert_eq!(err, LinalgError::DimensionMismatch { expected: 3, found: 2 });
    }

    #[test]
    fn ellipsoid_norm_cases() {
        let i3 = SymMatrix::<f64>::identity(3);
        assert_eq!(ellipsoid_norm(&Vector::basis(3, 0), &i3).unwrap(), 1.0);
        assert_eq!(ellipsoid_norm(&Vector::zeros(3), &random_pd(3, 1)).unwrap(), 0.0);
        let neg = SymMatrix::diagonal(&[-1.0, 1.0]);
        assert!(matches!(
            ellipsoid_norm(&Vector::basis(2, 0), &neg),
            Err(LinalgError::NegativeQuadraticForm(_))
        ));
    }

    #[test]
    fn ellipsoid_norm_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..100 {
            let m = random_pd(4, seed);
            let x = Vector::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
            // (x xᵀ) : m, elementwise
            let outer = rank_one_update(&SymMatrix::zeros(4), &x).unwrap();
            let mut contraction = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    contraction += outer.get(i, j) * m.get(i, j);
                }
            }
            let norm = ellipsoid_norm(&x, &m).unwrap();
            assert_relative_eq!(norm * norm, contraction, max_relative = 1e-12);
        }
    }

    #[test]
    fn rank_one_update_cases() {
        let e1 = Vector::basis(3, 0);
        let r = rank_one_update(&SymMatrix::<f64>::zeros(3), &e1).unwrap();
        assert_eq!(r, SymMatrix::diagonal(&[1.0, 0.0, 0.0]));
        let r = rank_one_update(&SymMatrix::identity(3), &e1).unwrap();
        assert_eq!(r, SymMatrix::diagonal(&[2.0, 1.0, 1.0]));
        let x = Vector::from_vec(vec![0.5, -0.25, 1.0]);
        let g = random_pd(3, 9);
        let r = rank_one_update(&g, &x).unwrap();
        assert_relative_eq!(r.trace() - g.trace(), x.norm_squared(), epsilon = 1e-14);
        assert!(r.is_exactly_symmetric());
        assert!(rank_one_update(&g, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn logdet_monotone_under_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..50 {
            let m = random_pd(5, seed);
            let x = Vector::from_vec((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let up = rank_one_update(&m, &x).unwrap();
            assert!(logdet(&up).unwrap() >= logdet(&m).unwrap());
        }
    }

    #[test]
    fn symmetrize_cases() {
        let a = SquareMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap();
        let s = symmetrize(&a);
        let r2 = std::f64::consts::SQRT_2;
        assert_relative_eq!(s.get(0, 1), 2.0 * r2, epsilon = 1e-12);
        assert_relative_eq!(s.get(1, 1), 5.0 * r2, epsilon = 1e-12);
        let k = SquareMatrix::from_rows(vec![vec![0.0, 3.0], vec![-3.0, 0.0]]).unwrap();
        assert_eq!(symmetrize(&k), SymMatrix::zeros(2));
        assert!(SquareMatrix::<f64>::from_rows(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn symmetrize_offdiagonal_variance() {
        let sigma = 1.7;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut off, mut diag) = (0.0, 0.0);
        for _ in 0..n {
            let raw = SquareMatrix::from_fn(2, |_, _| sigma * f64::sample_standard_normal(&mut rng));
            let s = symmetrize(&raw);
            off += s.get(0, 1).powi(2);
            diag += s.get(0, 0).powi(2);
        }
        let var = sigma * sigma;
        assert!(((off / n as f64) / var - 1.0).abs() < 0.05);
        assert!(((diag / n as f64) / (2.0 * var) - 1.0).abs() < 0.05);
    }

    #[test]
    fn min_eigenvalue_cases() {
        assert_relative_eq!(min_eigenvalue(&SymMatrix::<f64>::identity(4)), 1.0, epsilon = 1e-12);
        assert_relative_eq!(min_eigenvalue(&SymMatrix::diagonal(&[3.0, -2.0])), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn min_eigenvalue_quadratic_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let (a, b, c): (f64, f64, f64) =
                (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let m = SymMatrix::from_rows(vec![vec![a, b], vec![b, c]]).unwrap();
            // λ² - (a+c)λ + (ac - b²) = 0
            let tr = a + c;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            let lo = 0.5 * (tr - disc);
            assert!((min_eigenvalue(&m) - lo).abs() <= 1e-8);
        }
    }

    #[test]
    fn jacobi_agrees_with_nalgebra() {
        for seed in 0..10 {
            let mut m = random_pd(7, seed);
            m.add_diagonal(-1.0);
            let ours = m.eigenvalues();
            let theirs = nalgebra_eigs(&m);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn f32_path_works() {
        let m = SymMatrix::<f32>::diagonal(&[2.0, 4.0]);
        let x = solve_psd(&m, &Vector::from_vec(vec![2.0f32, 4.0])).unwrap();
        assert_eq!(x.into_vec(), vec![1.0, 1.0]);
        assert!((logdet(&m).unwrap() - 8f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn psd_check_tolerates_rounding() {
        let mut m = SymMatrix::<f64>::diagonal(&[1.0, 1.0, 0.0]);
        m.add_diagonal(-1e-14);
        assert!(m.is_psd());
        assert!(!SymMatrix::<f64>::diagonal(&[1.0, -0.1]).is_psd());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn solve_inverts_multiply(seed in 0u64..10_000, n in 1usize..8) {
                let v = random_pd(n, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let theta = Vector::from_vec((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect());
                let back = solve_psd(&v, &v.mul_vec(&theta)).unwrap();
                let err = back.sub(&theta).norm() / theta.norm().max(1e-300);
                prop_assert!(err <= 1e-10, "relative error {}", err);
            }

            #[test]
            fn symmetrize_is_bitwise_symmetric(entries in proptest::collection::vec(-1e6f64..1e6, 16)) {
                let raw = SquareMatrix::from_fn(4, |i, j| entries[i * 4 + j]);
                prop_assert!(symmetrize(&raw).is_exactly_symmetric());
            }
        }
    }
}
