//! Dense column-major matrices and the handful of BLAS/LAPACK-style kernels
//! the network needs, backed by `faer`.

use faer::linalg::solvers::Solve;
use faer::{Accum, MatMut, MatRef, Par, Side};

use crate::error::{ensure, Error, Result};

/// Dense column-major `f64` matrix.
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Precondition,
            "buffer of {} values cannot hold a {rows}x{cols} matrix",
            data.len()
        );
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Build from row slices; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Matrix::from_fn(n, m, |i, j| rows[i][j])
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
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Copy of columns `start..end`.
    pub fn cols_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: end - start,
            data: self.data[start * self.rows..end * self.rows].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn view(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.rows, self.cols)
    }

    pub fn view_mut(&mut self) -> MatMut<'_, f64> {
        MatMut::from_column_major_slice_mut(&mut self.data, self.rows, self.cols)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

/// `a * b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.cols);
    faer::linalg::matmul::matmul(out.view_mut(), Accum::Replace, a.view(), b.view(), 1.0, Par::Seq);
    out
}

/// `dst = a * b`
pub fn matmul_into(dst: &mut Matrix, a: &Matrix, b: &Matrix) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((dst.rows, dst.cols), (a.rows, b.cols), "output shape");
    faer::linalg::matmul::matmul(dst.view_mut(), Accum::Replace, a.view(), b.view(), 1.0, Par::Seq);
}

/// `a * bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.rows);
    faer::linalg::matmul::matmul(
        out.view_mut(),
        Accum::Replace,
        a.view(),
        b.view().transpose(),
        1.0,
        Par::Seq,
    );
    out
}

/// `dst += a * aᵀ` on the lower triangle of `dst` (plus the upper half of
/// each diagonal panel); strictly-upper panels are left untouched.
///
/// Row panels go through the general product, which runs faster than a
/// triangular kernel while doing little more than half of the full work.
pub fn syrk_lower_add(dst: &mut Matrix, a: &Matrix) {
    const PANEL: usize = 512;
    assert_eq!(dst.rows, a.rows);
    assert_eq!(dst.cols, a.rows);
    let n = a.rows;
    let av = a.view();
    // A transposed copy is much friendlier to the product kernel than a
    // transposed view.
    let at = a.transpose();
    let atv = at.view();
    for r0 in (0..n).step_by(PANEL) {
        let h = PANEL.min(n - r0);
        let r1 = r0 + h;
        faer::linalg::matmul::matmul(
            dst.view_mut().submatrix_mut(r0, 0, h, r1),
            Accum::Add,
            av.subrows(r0, h),
            atv.subcols(0, r1),
            1.0,
            Par::Seq,
        );
    }
}

/// Mirror the lower triangle into the upper one.
pub fn symmetrize_from_lower(m: &mut Matrix) {
    let n = m.rows;
    for j in 0..n {
        for i in (j + 1)..n {
            let v = m[(i, j)];
            m[(j, i)] = v;
        }
    }
}

/// Pairwise (cascade) summation; order depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl Cholesky {
    /// Factor `m` (only the lower triangle is read).
    pub fn new(m: &Matrix) -> Result<Self> {
        ensure!(m.rows == m.cols, Precondition, "Cholesky of a non-square matrix");
        let llt = m.view().llt(Side::Lower).map_err(|e| {
            Error::Numeric(format!("matrix is not positive definite ({e:?})"))
        })?;
        Ok(Cholesky { llt, n: m.rows })
    }

    /// Lower bound on the 2-norm condition number: `(max L_ii / min L_ii)^2`.
    pub fn condition_estimate(&self) -> f64 {
        let l = self.llt.L();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.n {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo == 0.0 {
            f64::INFINITY
        } else {
            (hi / lo).powi(2)
        }
    }

    /// Solve `m x = rhs` for every column of `rhs`, in place.
    pub fn solve_in_place(&self, rhs: &mut Matrix) {
        assert_eq!(rhs.rows, self.n);
        self.llt.solve_in_place(rhs.view_mut());
    }
}

/// Eigendecomposition of a symmetric matrix: eigenvalues ascending and the
/// matching orthonormal eigenvectors as columns.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure!(m.rows == m.cols, Precondition, "eigendecomposition of a non-square matrix");
    let evd = m
        .view()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigendecomposition failed ({e:?})")))?;
    let n = m.rows;
    let values = (0..n).map(|i| evd.S()[i]).collect();
    let u = evd.U();
    let vectors = Matrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syrk_matches_full_product() {
        let a = Matrix::from_fn(5, 7, |i, j| ((i * 3 + j * 5) % 11) as f64 - 4.0);
        let mut g = Matrix::zeros(5, 5);
        syrk_lower_add(&mut g, &a);
        symmetrize_from_lower(&mut g);
        let full = matmul_nt(&a, &a);
        assert_eq!(g.max_abs_diff(&full), 0.0);
    }

    #[test]
    fn syrk_spanning_several_panels() {
        let a = Matrix::from_fn(1100, 30, |i, j| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let mut g = Matrix::zeros(1100, 1100);
        syrk_lower_add(&mut g, &a);
        syrk_lower_add(&mut g, &a);
        symmetrize_from_lower(&mut g);
        let mut full = matmul_nt(&a, &a);
        full.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        assert!(g.max_abs_diff(&full) < 1e-9);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let x = Matrix::from_rows(&[&[1.0], &[-2.0], &[0.5]]);
        let mut b = matmul(&a, &x);
        Cholesky::new(&a).unwrap().solve_in_place(&mut b);
        assert!(b.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(matches!(Cholesky::new(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn eigen_reconstructs() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let (vals, _) = symmetric_eigen(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }
}
