//! Small dense linear algebra: vectors, row-major matrices, pivoted LU,
//! Cholesky, and block-diagonal matrices stored as lists of dense blocks.
//!
//! Everything here is sized for variational parameter vectors (hundreds to a
//! few thousand entries); no attempt is made at cache blocking or SIMD.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Relative pivot threshold below which elimination reports singularity.
const PIVOT_RELATIVE_FLOOR: f64 = 1e-13;

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max(math::abs(x - y));
    }
    m
}

// ---------------------------------------------------------------------------
// Dense matrices
// ---------------------------------------------------------------------------

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix {
            rows: r,
            cols: c,
            data,
        })
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            out[i] = dot(self.row(i), v);
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_to(i, j, a * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * I` (square only).
    pub fn add_scaled_identity(&mut self, s: f64) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            self.add_to(i, i, s);
        }
    }

    /// Replace with `(M + M^T) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = (self.get(i, j) + self.get(j, i)) / 2.0;
                self.set(i, j, avg);
                self.set(j, i, avg);
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        max_abs_diff(&self.data, &other.data)
    }
}

// ---------------------------------------------------------------------------
// Factorizations
// ---------------------------------------------------------------------------

/// Partially pivoted LU factorization of a square matrix.
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

pub fn lu_factor(a: &DenseMatrix) -> Result<Lu> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.max_abs().max(1.0);
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_val = math::abs(lu.get(k, k));
        for i in (k + 1)..n {
            let v = math::abs(lu.get(i, k));
            if v > pivot_val {
                pivot_val = v;
                pivot_row = i;
            }
        }
        if pivot_val < PIVOT_RELATIVE_FLOOR * scale {
            return Err(Error::SingularMatrix);
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(pivot_row, j));
                lu.set(pivot_row, j, tmp);
            }
            perm.swap(k, pivot_row);
        }
        let pivot = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pivot;
            lu.set(i, k, factor);
            for j in (k + 1)..n {
                let v = lu.get(i, j) - factor * lu.get(k, j);
                lu.set(i, j, v);
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        debug_assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // forward substitution (unit lower triangle)
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        x
    }
}

/// Solve `A x = b` by pivoted LU.
pub fn solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.len(),
        });
    }
    Ok(lu_factor(a)?.solve(b))
}

/// Invert a square matrix by pivoted LU, column by column.
pub fn invert(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    let lu = lu_factor(a)?;
    let mut out = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lu.solve(&e);
        e[j] = 0.0;
        for i in 0..n {
            out.set(i, j, col[i]);
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l.set(i, j, math::sqrt(acc));
            } else {
                l.set(i, j, acc / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    let mut x = b.to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= l.get(i, j) * x[j];
        }
        x[i] = acc / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= l.get(j, i) * x[j];
        }
        x[i] = acc / l.get(i, i);
    }
    x
}

/// `ln det(A)` from the lower Cholesky factor of A.
pub fn ln_det_from_cholesky(l: &DenseMatrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..l.rows() {
        acc += math::ln(l.get(i, i));
    }
    2.0 * acc
}

// ---------------------------------------------------------------------------
// Block-diagonal matrices
// ---------------------------------------------------------------------------

/// Block-diagonal matrix stored as a list of dense blocks; the off-block
/// entries are implicitly zero and never materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    blocks: Vec<DenseMatrix>,
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockDiag {
    pub fn new(blocks: Vec<DenseMatrix>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for b in &blocks {
            if !b.is_square() {
                return Err(Error::DimensionMismatch {
                    expected: b.rows(),
                    got: b.cols(),
                });
            }
            offsets.push(dim);
            dim += b.rows();
        }
        Ok(BlockDiag {
            blocks,
            offsets,
            dim,
        })
    }

    pub fn zeros(block_sizes: &[usize]) -> Self {
        let blocks = block_sizes
            .iter()
            .map(|&s| DenseMatrix::zeros(s, s))
            .collect();
        Self::new(blocks).expect("square by construction")
    }

    pub fn identity(block_sizes: &[usize]) -> Self {
        let blocks = block_sizes
            .iter()
            .map(|&s| DenseMatrix::identity(s))
            .collect();
        Self::new(blocks).expect("square by construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DenseMatrix {
        &mut self.blocks[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for (b, &off) in self.blocks.iter().zip(self.offsets.iter()) {
            let s = b.rows();
            b.matvec_into(&v[off..off + s], &mut out[off..off + s]);
        }
    }

    /// `self += other`, blockwise.
    pub fn add_assign(&mut self, other: &BlockDiag) -> Result<()> {
        if self.dim != other.dim || self.blocks.len() != other.blocks.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        for (a, b) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            debug_assert_eq!(a.rows(), b.rows());
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    a.add_to(i, j, b.get(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            b.scale(s);
        }
    }

    /// Write the blocks into a dense matrix (which must be dim x dim and is
    /// accumulated into, not overwritten).
    pub fn add_densified_into(&self, m: &mut DenseMatrix) {
        debug_assert_eq!(m.rows(), self.dim);
        debug_assert_eq!(m.cols(), self.dim);
        for (b, &off) in self.blocks.iter().zip(self.offsets.iter()) {
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    m.add_to(off + i, off + j, b.get(i, j));
                }
            }
        }
    }

    pub fn densify(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim, self.dim);
        self.add_densified_into(&mut m);
        m
    }

    /// Blockwise inverse of `shift * I + self`. Cost is linear in the number
    /// of blocks at fixed block size.
    pub fn invert_shifted(&self, shift: f64) -> Result<BlockDiag> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (idx, b) in self.blocks.iter().enumerate() {
            let mut shifted = b.clone();
            shifted.add_scaled_identity(shift);
            let inv = invert(&shifted).map_err(|_| Error::SingularBlock { block: idx })?;
            blocks.push(inv);
        }
        BlockDiag::new(blocks)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().fold(0.0f64, |m, b| m.max(b.max_abs()))
    }
}
