//! Dense row-major matrices and the symmetric eigensolver behind kernel-matrix
//! square roots.
//!
//! The eigensolver is the cyclic Jacobi method: rotations are applied to every
//! off-diagonal pair in a fixed order until the off-diagonal Frobenius mass drops
//! below `1e-12 * ||A||_F`. It is slow for very large matrices but fully
//! deterministic and accurate to working precision on the kernel matrices used here
//! (a few hundred rows at most).

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`sym_eig`] and [`psd_power`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOLERANCE * ||A||_op` are treated as genuine indefiniteness.
pub const PSD_TOLERANCE: f64 = 1e-6;

const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense matrix of `f64` stored in row-major order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        let m = Matrix::from_vec(r.rows, r.cols, r.data)?;
        m.ensure_finite("matrix")?;
        Ok(m)
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(self.mul_unchecked(rhs))
    }

    pub(crate) fn mul_unchecked(&self, rhs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dim(format!(
                "cannot multiply transpose of {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &vi) in self.row_iter().zip(v) {
            axpy(vi, r, &mut out);
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(format!(
                "cannot {op} {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "subtract", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * rhs`; shapes must agree.
    pub fn add_scaled(&mut self, s: f64, rhs: &Matrix) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim("add_scaled shape mismatch"));
        }
        axpy(s, &rhs.data, &mut self.data);
        Ok(())
    }

    /// Frobenius inner product `<self, rhs>`.
    pub fn frobenius_dot(&self, rhs: &Matrix) -> Result<f64> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim("frobenius_dot shape mismatch"));
        }
        Ok(dot(&self.data, &rhs.data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(Error::NonFinite(format!(
                "{what} entry ({}, {})",
                k / self.cols.max(1),
                k % self.cols.max(1)
            ))),
        }
    }

    /// Largest `|a_ij - a_ji|`; `None` for non-square input.
    pub fn max_asymmetry(&self) -> Option<f64> {
        if !self.is_square() {
            return None;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }

    /// Checks squareness and symmetry within [`SYMMETRY_TOLERANCE`] relative to `||A||_F`.
    pub fn ensure_symmetric(&self) -> Result<()> {
        let asym = self.max_asymmetry().ok_or_else(|| {
            Error::dim(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            ))
        })?;
        if asym > SYMMETRY_TOLERANCE * self.frobenius_norm() {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        Ok(())
    }

    /// Replaces `A` by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Sum of a slice by recursive halving; the association order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Eigen-decomposition `A = V diag(values) Vᵀ` of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthogonal matrix whose columns are the matching eigenvectors.
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let vi = self.vectors.row(i);
            for j in i..n {
                let vj = self.vectors.row(j);
                let mut s = 0.0;
                for k in 0..n {
                    s += vi[k] * mapped[k] * vj[k];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|l| l)
    }

    /// Spectral norm `max |λ|`.
    pub fn operator_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(a: &Matrix) -> Result<SymEigen> {
    a.ensure_finite("eigensolver input")?;
    a.ensure_symmetric()?;
    let n = a.rows();
    let mut w = a.clone();
    w.symmetrize();
    let mut v = Matrix::identity(n);
    let target = JACOBI_TOLERANCE * frobenius_norm(a);

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut w, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&w);
        if off > target {
            return Err(Error::Convergence {
                method: "jacobi eigensolver",
                iterations: JACOBI_MAX_SWEEPS,
                residual: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| w[(k, k)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymEigen { values, vectors })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation zeroing `a[p][q]`; accumulates the rotation into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// `A^p` for a symmetric positive semidefinite `A` and `p >= 0`.
///
/// Eigenvalues in `[-1e-6 ||A||_op, 0)` are treated as rounding noise and clamped to
/// zero before powering; anything more negative is rejected.
pub fn psd_power(a: &Matrix, p: f64) -> Result<Matrix> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "psd_power exponent must be finite and nonnegative, got {p}"
        )));
    }
    let eig = sym_eig(a)?;
    check_psd(&eig)?;
    Ok(eig.reconstruct_with(|l| if l <= 0.0 { 0.0 } else { l.powf(p) }))
}

/// Several powers of the same PSD matrix from one eigendecomposition.
pub fn psd_powers(a: &Matrix, powers: &[f64]) -> Result<Vec<Matrix>> {
    let eig = sym_eig(a)?;
    check_psd(&eig)?;
    powers
        .iter()
        .map(|&p| {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "psd_power exponent must be finite and nonnegative, got {p}"
                )));
            }
            Ok(eig.reconstruct_with(|l| if l <= 0.0 { 0.0 } else { l.powf(p) }))
        })
        .collect()
}

fn check_psd(eig: &SymEigen) -> Result<()> {
    let op = eig.operator_norm();
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min < -PSD_TOLERANCE * op {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_symmetric(n: usize, rng: &mut Rng) -> Matrix {
        let mut a = Matrix::from_fn(n, n, |_, _| rng.uniform_range(-1.0, 1.0));
        a.symmetrize();
        a
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let e = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        assert!(vtv.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn diagonal_eigenvalues_sorted_descending() {
        let e = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = Rng::new(7);
        let a = random_symmetric(6, &mut rng);
        let e = sym_eig(&a).unwrap();
        let r = e.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(r < 1e-8, "residual {r}");
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn psd_power_diagonal() {
        let r = psd_power(&Matrix::from_diag(&[4.0, 9.0]), 0.5).unwrap();
        assert!(r.sub(&Matrix::from_diag(&[2.0, 3.0])).unwrap().max_abs() < 1e-14);
        let i = psd_power(&Matrix::identity(4), 0.5).unwrap();
        assert!(i.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn psd_power_gram_square_root() {
        let mut rng = Rng::new(11);
        let g = Matrix::from_fn(4, 7, |_, _| rng.standard_normal());
        let gtg = g.transpose().matmul(&g).unwrap();
        let root = psd_power(&gtg, 0.5).unwrap();
        let sq = root.matmul(&root).unwrap();
        assert!(sq.sub(&gtg).unwrap().frobenius_norm() <= 1e-7 * gtg.frobenius_norm());
        assert!(root.max_asymmetry().unwrap() == 0.0);
        let p32 = psd_power(&gtg, 1.5).unwrap();
        let alt = root.matmul(&gtg).unwrap();
        assert!(p32.sub(&alt).unwrap().frobenius_norm() <= 1e-7 * alt.frobenius_norm());
    }

    #[test]
    fn psd_power_rejects_indefinite() {
        let a = Matrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(psd_power(&a, 0.5), Err(Error::NotPsd { .. })));
        // tiny negative eigenvalue is clamped, not rejected
        let b = Matrix::from_diag(&[1.0, -1e-9]);
        let r = psd_power(&b, 0.5).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert!((frobenius_norm(&Matrix::identity(2)) - 2f64.sqrt()).abs() < 1e-15);
        let mut rng = Rng::new(3);
        let a = Matrix::from_fn(4, 3, |_, _| rng.standard_normal());
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                s += a[(i, j)] * a[(i, j)];
            }
        }
        assert!((frobenius_norm(&a) - s.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn serde_rejects_bad_shape() {
        let bad = r#"{"rows":2,"cols":2,"data":[1,2,3]}"#;
        assert!(serde_json::from_str::<Matrix>(bad).is_err());
        let ok = r#"{"rows":1,"cols":2,"data":[1,2]}"#;
        let m: Matrix = serde_json::from_str(ok).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }
}
