//! Small dense and compressed-row linear algebra.
//!
//! Newton matrices are assembled as [`DenseMatrix`] and factored with a
//! blocked LU with partial pivoting. Coupling operators that are mostly
//! zero are kept as [`SparseMatrix`] and only ever used for products.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use thiserror::Error;

/// Entries below `DROP_RTOL * max|A|` are dropped during elimination.
pub const DROP_RTOL: f64 = 1e-150;

/// Pivots below `PIVOT_RTOL * max|A|` are treated as zero.
pub const PIVOT_RTOL: f64 = 1e-14;

const PANEL: usize = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("column indices must be strictly increasing within row {row}")]
    UnsortedRow { row: usize },
}

fn check_dim(expected: usize, found: usize) -> Result<(), LinalgError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found })
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        check_dim(rows * cols, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows, e.g. `&[&[1.0, 2.0], &[3.0, 4.0]]`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (i + 1..self.cols).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `self[i][i] += shift` for every diagonal entry.
    pub fn add_to_diagonal(&mut self, shift: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += shift;
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_dim(self.cols, v.len())?;
        let mut out = vec![0.0; self.rows];
        self.apply(v, &mut out);
        Ok(out)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        check_dim(self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                axpy(a, other.row(p), orow);
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        check_dim(rows + 1, row_offsets.len())?;
        check_dim(col_indices.len(), values.len())?;
        check_dim(values.len(), *row_offsets.last().unwrap_or(&0))?;
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(LinalgError::UnsortedRow { row: r });
            }
            let idx = &col_indices[lo..hi];
            if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&c| c >= cols) {
                return Err(LinalgError::UnsortedRow { row: r });
            }
            if let Some(k) = values[lo..hi].iter().position(|v| !v.is_finite()) {
                return Err(LinalgError::NonFinite {
                    row: r,
                    col: idx[k],
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps every entry of `m` whose magnitude is above `drop_tol`.
    pub fn from_dense(m: &DenseMatrix, drop_tol: f64) -> Self {
        let mut row_offsets = Vec::with_capacity(m.rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..m.rows {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v.abs() > drop_tol {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            rows: m.rows,
            cols: m.cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_dim(self.cols, v.len())?;
        let mut out = vec![0.0; self.rows];
        self.apply(v, &mut out);
        Ok(out)
    }
}

/// A matrix that can act on vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `out = self * v`. Panics on mismatched lengths; use [`LinearOperator::try_apply`]
    /// when the shapes are not already known to agree.
    fn apply(&self, v: &[f64], out: &mut [f64]);

    fn try_apply(&self, v: &[f64], out: &mut [f64]) -> Result<(), LinalgError> {
        check_dim(self.ncols(), v.len())?;
        check_dim(self.nrows(), out.len())?;
        self.apply(v, out);
        Ok(())
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let (idx, vals) = self.row(i);
            // same summation order as the dense product over the stored entries
            *o = idx
                .iter()
                .zip(vals)
                .fold(0.0, |acc, (&j, &a)| acc + a * v[j]);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// LU factors `P A = L U` of a square matrix, stored in place.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors `a`, consuming its storage.
    pub fn factor(a: DenseMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch {
                expected: a.rows,
                found: a.cols,
            });
        }
        let n = a.rows;
        let amax = a.max_abs();
        let threshold = PIVOT_RTOL * amax;
        let tiny = DROP_RTOL * amax;
        let mut lu = a.data;
        let mut perm: Vec<usize> = (0..n).collect();

        let mut k0 = 0;
        while k0 < n {
            let k1 = (k0 + PANEL).min(n);
            drop_tiny_panel(&mut lu, n, k0, k1, tiny);
            factor_panel(&mut lu, n, k0, k1, threshold, &mut perm)?;
            if k1 < n {
                solve_panel_rows(&mut lu, n, k0, k1);
                update_trailing(&mut lu, n, k0, k1);
            }
            k0 = k1;
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        check_dim(self.n, b.len())?;
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            x[i] -= dot(row, &x[..i]);
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
        b.copy_from_slice(&x);
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

// Unblocked elimination of columns k0..k1, swapping whole rows so that the
// trailing part of the matrix stays consistent with the permutation.
fn factor_panel(
    lu: &mut [f64],
    n: usize,
    k0: usize,
    k1: usize,
    threshold: f64,
    perm: &mut [usize],
) -> Result<(), LinalgError> {
    for k in k0..k1 {
        let mut p = k;
        let mut best = lu[k * n + k].abs();
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > threshold) || best == 0.0 {
            return Err(LinalgError::SingularMatrix {
                column: k,
                pivot: best,
            });
        }
        if p != k {
            let (head, tail) = lu.split_at_mut(p * n);
            head[k * n..(k + 1) * n].swap_with_slice(&mut tail[..n]);
            perm.swap(k, p);
        }
        let pivot = lu[k * n + k];
        let (head, tail) = lu.split_at_mut((k + 1) * n);
        let prow = &head[k * n + k + 1..k * n + k1];
        for row in tail.chunks_exact_mut(n) {
            let l = row[k] / pivot;
            row[k] = l;
            axpy_nonzero(-l, prow, &mut row[k + 1..k1]);
        }
    }
    Ok(())
}

// Fill-in of banded systems decays geometrically. Left alone it reaches the
// subnormal range, where arithmetic is very slow on common hardware, so the
// panel rows and columns are cleared of entries far below the matrix scale
// before they are used as operands. NaN is kept.
fn drop_tiny_panel(lu: &mut [f64], n: usize, k0: usize, k1: usize, tiny: f64) {
    let drop = |v: &mut f64| {
        if v.abs() < tiny {
            *v = 0.0;
        }
    };
    for (i, row) in lu.chunks_exact_mut(n).enumerate().skip(k0) {
        if i < k1 {
            row[k0..].iter_mut().for_each(drop);
        } else {
            row[k0..k1].iter_mut().for_each(drop);
        }
    }
}

#[inline(always)]
fn axpy_nonzero(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha != 0.0 {
        axpy(alpha, x, y);
    }
}

// U12 = L11^{-1} A12 for the panel rows.
fn solve_panel_rows(lu: &mut [f64], n: usize, k0: usize, k1: usize) {
    for k in k0..k1 {
        let (head, tail) = lu.split_at_mut((k + 1) * n);
        let urow = &head[k * n + k1..(k + 1) * n];
        for i in k + 1..k1 {
            let row = &mut tail[(i - k - 1) * n..(i - k) * n];
            let l = row[k];
            axpy_nonzero(-l, urow, &mut row[k1..]);
        }
    }
}

// A22 -= L21 U12. Dispatches to an FMA build of the same kernel when the
// CPU supports it.
fn update_trailing(lu: &mut [f64], n: usize, k0: usize, k1: usize) {
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required target features were detected at runtime.
            unsafe { update_trailing_fma(lu, n, k0, k1) };
            return;
        }
    }
    update_trailing_kernel(lu, n, k0, k1);
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
#[target_feature(enable = "avx2,fma")]
unsafe fn update_trailing_fma(lu: &mut [f64], n: usize, k0: usize, k1: usize) {
    update_trailing_kernel(lu, n, k0, k1);
}

const MR: usize = 4;
const NR: usize = 8;

// Register-blocked MR x NR tiles: each tile of A22 is accumulated over the
// whole panel before being written back once.
#[inline(always)]
fn update_trailing_kernel(lu: &mut [f64], n: usize, k0: usize, k1: usize) {
    let kb = k1 - k0;
    let (head, tail) = lu.split_at_mut(k1 * n);
    let upanel = &head[k0 * n..];
    let rows = n - k1;
    // Only panel columns with a nonzero multiplier in the row block are
    // packed, which skips structural zeros of sparse operators.
    let mut lpack = [[0.0f64; MR]; PANEL];
    let mut pidx = [0usize; PANEL];
    let mut r0 = 0;
    while r0 + MR <= rows {
        let mut np = 0;
        for p in 0..kb {
            let mut any = false;
            for r in 0..MR {
                let l = tail[(r0 + r) * n + k0 + p];
                lpack[np][r] = l;
                any |= l != 0.0;
            }
            pidx[np] = p;
            np += any as usize;
        }
        if np == 0 {
            r0 += MR;
            continue;
        }
        let mut j = k1;
        while j + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for (lrow, &p) in lpack[..np].iter().zip(&pidx[..np]) {
                let u: &[f64; NR] = upanel[p * n + j..p * n + j + NR].try_into().unwrap();
                for r in 0..MR {
                    let l = lrow[r];
                    for c in 0..NR {
                        acc[r][c] += l * u[c];
                    }
                }
            }
            for r in 0..MR {
                let out = &mut tail[(r0 + r) * n + j..(r0 + r) * n + j + NR];
                for c in 0..NR {
                    out[c] -= acc[r][c];
                }
            }
            j += NR;
        }
        for r in 0..MR {
            let row = &mut tail[(r0 + r) * n..(r0 + r + 1) * n];
            for (lrow, &p) in lpack[..np].iter().zip(&pidx[..np]) {
                let urow = &upanel[p * n + j..(p + 1) * n];
                axpy_nonzero(-lrow[r], urow, &mut row[j..]);
            }
        }
        r0 += MR;
    }
    for row in tail[r0 * n..].chunks_exact_mut(n) {
        let (lpart, rest) = row.split_at_mut(k1);
        for (p, &l) in lpart[k0..k1].iter().enumerate() {
            let urow = &upanel[p * n + k1..(p + 1) * n];
            axpy_nonzero(-l, urow, rest);
        }
    }
}

/// Solves `A x = b` without modifying `A`.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    check_dim(a.rows, b.len())?;
    LuFactors::factor(a.clone())?.solve(b)
}
