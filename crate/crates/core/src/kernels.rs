//! Matrix/vector storage and the data-parallel compute primitives everything
//! else is built on.
//!
//! All kernels are pure unless their name ends in `_into` or `_inplace`.
//! Reductions use a fixed chunking scheme so that results are bitwise
//! reproducible for a given matrix and thread count; across different thread
//! counts results may differ by reduction-order roundoff only.

use rayon::prelude::*;

use crate::error::SvdsError;

/// Below this much work a kernel stays on the calling thread.
const PAR_MIN_WORK: usize = 16_384;
/// Chunk length for blocked dot/norm reductions.
const DOT_CHUNK: usize = 8_192;
/// Row chunk for dense column-accumulate products.
const GEMV_CHUNK_ROWS: usize = 1_024;
/// Row-block sizing for the transposed sparse product.
const SPMV_T_BLOCK_ROWS: usize = 512;
const SPMV_T_MAX_BLOCKS: usize = 64;

// ---------------------------------------------------------------------------
// Storage types
// ---------------------------------------------------------------------------

/// Sparse matrix in compressed-sparse-row layout, 0-based indices.
///
/// Invariants enforced at construction: `row_ptr` is monotone with
/// `row_ptr[0] == 0` and `row_ptr[nrows] == nnz`, column indices are strictly
/// increasing within each row and in `0..ncols`, and all values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SvdsError> {
        if row_ptr.len() != nrows + 1 {
            return Err(SvdsError::InvalidArgument(format!(
                "row_ptr length {} != nrows + 1 = {}",
                row_ptr.len(),
                nrows + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[nrows] != values.len() {
            return Err(SvdsError::InvalidArgument(format!(
                "row_ptr must start at 0 and end at nnz = {}",
                values.len()
            )));
        }
        if col_idx.len() != values.len() {
            return Err(SvdsError::InvalidArgument(format!(
                "col_idx length {} != values length {}",
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..nrows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(SvdsError::InvalidArgument(format!(
                    "row_ptr not monotone at row {i}"
                )));
            }
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (p, &c) in row.iter().enumerate() {
                if c >= ncols {
                    return Err(SvdsError::InvalidArgument(format!(
                        "column index {c} out of range in row {i}"
                    )));
                }
                if p > 0 && row[p - 1] >= c {
                    return Err(SvdsError::InvalidArgument(format!(
                        "column indices not strictly increasing in row {i}"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SvdsError::InvalidArgument(
                "matrix values must be finite".into(),
            ));
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a CSR matrix from (row, col, value) triplets. Duplicate
    /// positions are summed, matching the Matrix Market convention.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SvdsError> {
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SvdsError::InvalidArgument(format!(
                    "triplet ({r}, {c}) out of bounds for {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(SvdsError::InvalidArgument(
                    "matrix values must be finite".into(),
                ));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut row_ptr = vec![0usize; nrows + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = merged.iter().map(|t| t.1).collect();
        let values = merged.iter().map(|t| t.2).collect();
        CsrMatrix::new(nrows, ncols, row_ptr, col_idx, values)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Expands to a dense matrix. Intended for small inputs and test oracles.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                out.set(i, j, out.get(i, j) + self.values[p]);
            }
        }
        out
    }
}

/// Dense matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_column_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self, SvdsError> {
        if data.len() != nrows * ncols {
            return Err(SvdsError::InvalidArgument(format!(
                "data length {} != {nrows} * {ncols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SvdsError::InvalidArgument(
                "matrix values must be finite".into(),
            ));
        }
        Ok(DenseMatrix { nrows, ncols, data })
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self, SvdsError> {
        if data.len() != nrows * ncols {
            return Err(SvdsError::InvalidArgument(format!(
                "data length {} != {nrows} * {ncols}",
                data.len()
            )));
        }
        Ok(DenseMatrix::from_fn(nrows, ncols, |i, j| data[i * ncols + j]))
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for j in 0..ncols {
            for i in 0..nrows {
                data.push(f(i, j));
            }
        }
        DenseMatrix { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.data[j * self.nrows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    pub(crate) fn copy_col_within(&mut self, src: usize, dst: usize) {
        if src == dst {
            return;
        }
        let n = self.nrows;
        let (a, b) = if src < dst {
            let (head, tail) = self.data.split_at_mut(dst * n);
            (&head[src * n..src * n + n], &mut tail[..n])
        } else {
            let (head, tail) = self.data.split_at_mut(src * n);
            (&tail[..n], &mut head[dst * n..dst * n + n])
        };
        b.copy_from_slice(a);
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.ncols, self.nrows, |i, j| self.get(j, i))
    }

    /// Copies the leading `rows` x `cols` block.
    pub fn leading(&self, rows: usize, cols: usize) -> DenseMatrix {
        assert!(rows <= self.nrows && cols <= self.ncols);
        DenseMatrix::from_fn(rows, cols, |i, j| self.get(i, j))
    }

    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// Uniform matrix-vector interface
// ---------------------------------------------------------------------------

/// Storage-agnostic handle used by the Lanczos process and the solver: a
/// matrix is anything that can apply itself and its transpose to a vector.
pub trait MatVec: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Nonzero count; dense implementations report `nrows * ncols`.
    fn nnz(&self) -> usize;
    /// y = A x
    fn apply_into(&self, x: &[f64], y: &mut [f64]);
    /// y = Aᵀ x
    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]);
}

impl MatVec for CsrMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn nnz(&self) -> usize {
        self.values.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        spmv_into(self, x, y);
    }

    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        spmv_t_into(self, x, y);
    }
}

impl MatVec for DenseMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn nnz(&self) -> usize {
        self.nrows * self.ncols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        gemv_into(self, x, false, y);
    }

    fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        gemv_into(self, x, true, y);
    }
}

// ---------------------------------------------------------------------------
// Sparse products
// ---------------------------------------------------------------------------

#[inline]
fn csr_row_dot(a: &CsrMatrix, i: usize, x: &[f64]) -> f64 {
    let (s, e) = (a.row_ptr[i], a.row_ptr[i + 1]);
    a.col_idx[s..e]
        .iter()
        .zip(&a.values[s..e])
        .map(|(&j, &v)| v * x[j])
        .sum()
}

/// y = A x
pub fn spmv_into(a: &CsrMatrix, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), a.ncols, "spmv: x length {} != ncols {}", x.len(), a.ncols);
    assert_eq!(y.len(), a.nrows, "spmv: y length {} != nrows {}", y.len(), a.nrows);
    if a.nnz() >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        y.par_iter_mut()
            .enumerate()
            .for_each(|(i, yi)| *yi = csr_row_dot(a, i, x));
    } else {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = csr_row_dot(a, i, x);
        }
    }
}

pub fn spmv(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows];
    spmv_into(a, x, &mut y);
    y
}

/// y = Aᵀ x, computed from the CSR structure without materializing Aᵀ.
///
/// Parallel runs partition rows into blocks with per-block accumulators that
/// are merged in block order, so a given matrix and thread count always
/// reduce in the same order.
#[allow(clippy::needless_range_loop)]
pub fn spmv_t_into(a: &CsrMatrix, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), a.nrows, "spmv_t: x length {} != nrows {}", x.len(), a.nrows);
    assert_eq!(y.len(), a.ncols, "spmv_t: y length {} != ncols {}", y.len(), a.ncols);
    let nblocks = a
        .nrows
        .div_ceil(SPMV_T_BLOCK_ROWS)
        .clamp(1, SPMV_T_MAX_BLOCKS);
    if nblocks == 1 || a.nnz() < PAR_MIN_WORK || rayon::current_num_threads() == 1 {
        y.fill(0.0);
        for i in 0..a.nrows {
            let xi = x[i];
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                y[a.col_idx[p]] += a.values[p] * xi;
            }
        }
    } else {
        let rows_per = a.nrows.div_ceil(nblocks);
        let partials: Vec<Vec<f64>> = (0..nblocks)
            .into_par_iter()
            .map(|b| {
                let mut part = vec![0.0; a.ncols];
                let lo = b * rows_per;
                let hi = ((b + 1) * rows_per).min(a.nrows);
                for i in lo..hi {
                    let xi = x[i];
                    for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                        part[a.col_idx[p]] += a.values[p] * xi;
                    }
                }
                part
            })
            .collect();
        y.fill(0.0);
        for part in &partials {
            for (yc, pc) in y.iter_mut().zip(part) {
                *yc += pc;
            }
        }
    }
}

pub fn spmv_t(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.ncols];
    spmv_t_into(a, x, &mut y);
    y
}

// ---------------------------------------------------------------------------
// Dense products
// ---------------------------------------------------------------------------

#[inline]
fn seq_dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// out[j] = (column j of m) . x, for j < ncols_used
fn gemv_cols_t_into(m: &DenseMatrix, ncols_used: usize, x: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), m.nrows, "gemv(t): x length {} != nrows {}", x.len(), m.nrows);
    assert!(ncols_used <= m.ncols);
    assert!(out.len() >= ncols_used);
    let out = &mut out[..ncols_used];
    if m.nrows * ncols_used >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(j, oj)| *oj = seq_dot(m.col(j), x));
    } else {
        for (j, oj) in out.iter_mut().enumerate() {
            *oj = seq_dot(m.col(j), x);
        }
    }
}

/// y += sign * sum_j coef[j] * (column j of m), for j < ncols_used.
///
/// Each output element accumulates columns in ascending j regardless of the
/// row chunking, so the result does not depend on the thread count.
#[allow(clippy::needless_range_loop)]
pub(crate) fn gemv_cols_accum(
    m: &DenseMatrix,
    ncols_used: usize,
    coef: &[f64],
    sign: f64,
    y: &mut [f64],
) {
    assert_eq!(y.len(), m.nrows, "gemv: y length {} != nrows {}", y.len(), m.nrows);
    assert!(ncols_used <= m.ncols);
    assert!(coef.len() >= ncols_used);
    let nrows = m.nrows;
    let body = |r0: usize, ychunk: &mut [f64]| {
        for j in 0..ncols_used {
            let cj = &m.col(j)[r0..r0 + ychunk.len()];
            let s = sign * coef[j];
            for (yi, &c) in ychunk.iter_mut().zip(cj) {
                *yi += s * c;
            }
        }
    };
    if nrows * ncols_used >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        y.par_chunks_mut(GEMV_CHUNK_ROWS)
            .enumerate()
            .for_each(|(ci, ychunk)| body(ci * GEMV_CHUNK_ROWS, ychunk));
    } else {
        for (ci, ychunk) in y.chunks_mut(GEMV_CHUNK_ROWS).enumerate() {
            body(ci * GEMV_CHUNK_ROWS, ychunk);
        }
    }
}

/// y = M x (or Mᵀ x when `transpose` is set).
pub fn gemv_into(m: &DenseMatrix, x: &[f64], transpose: bool, y: &mut [f64]) {
    if transpose {
        assert_eq!(y.len(), m.ncols, "gemv(t): y length {} != ncols {}", y.len(), m.ncols);
        gemv_cols_t_into(m, m.ncols, x, y);
    } else {
        assert_eq!(x.len(), m.ncols, "gemv: x length {} != ncols {}", x.len(), m.ncols);
        y.fill(0.0);
        gemv_cols_accum(m, m.ncols, x, 1.0, y);
    }
}

pub fn gemv(m: &DenseMatrix, x: &[f64], transpose: bool) -> Vec<f64> {
    let mut y = vec![0.0; if transpose { m.ncols } else { m.nrows }];
    gemv_into(m, x, transpose, &mut y);
    y
}

/// out = A[:, :a_cols] * B[:a_cols, :b_cols], written into the leading
/// columns of `out` (which must have `a.nrows` rows and at least `b_cols`
/// columns).
pub(crate) fn gemm_prefix_into(
    a: &DenseMatrix,
    a_cols: usize,
    b: &DenseMatrix,
    b_cols: usize,
    out: &mut DenseMatrix,
) {
    assert!(a_cols <= a.ncols && a_cols <= b.nrows);
    assert!(b_cols <= b.ncols);
    assert_eq!(out.nrows, a.nrows);
    assert!(out.ncols >= b_cols);
    let nrows = a.nrows;
    let cols = &mut out.data[..nrows * b_cols];
    let col_body = |j: usize, out_col: &mut [f64]| {
        out_col.fill(0.0);
        for l in 0..a_cols {
            let blj = b.get(l, j);
            for (o, &ail) in out_col.iter_mut().zip(a.col(l)) {
                *o += blj * ail;
            }
        }
    };
    if nrows * a_cols * b_cols >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        cols.par_chunks_mut(nrows)
            .enumerate()
            .for_each(|(j, out_col)| col_body(j, out_col));
    } else {
        for (j, out_col) in cols.chunks_mut(nrows).enumerate() {
            col_body(j, out_col);
        }
    }
}

/// Dense matrix product, column-major.
pub fn gemm(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(
        a.ncols, b.nrows,
        "gemm: inner dimensions disagree ({} vs {})",
        a.ncols, b.nrows
    );
    let mut out = DenseMatrix::zeros(a.nrows, b.ncols);
    gemm_prefix_into(a, a.ncols, b, b.ncols, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Vector primitives
// ---------------------------------------------------------------------------

/// Euclidean dot product with a fixed blocked reduction order.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dot: lengths {} and {} disagree", x.len(), y.len());
    if x.len() >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        let sums: Vec<f64> = x
            .par_chunks(DOT_CHUNK)
            .zip(y.par_chunks(DOT_CHUNK))
            .map(|(cx, cy)| seq_dot(cx, cy))
            .collect();
        sums.iter().sum()
    } else {
        let mut total = 0.0;
        for (cx, cy) in x.chunks(DOT_CHUNK).zip(y.chunks(DOT_CHUNK)) {
            total += seq_dot(cx, cy);
        }
        total
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y += a x
pub fn axpy_inplace(a: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: lengths {} and {} disagree", x.len(), y.len());
    if x.len() >= PAR_MIN_WORK && rayon::current_num_threads() > 1 {
        y.par_chunks_mut(DOT_CHUNK)
            .zip(x.par_chunks(DOT_CHUNK))
            .for_each(|(cy, cx)| {
                for (yi, &xi) in cy.iter_mut().zip(cx) {
                    *yi += a * xi;
                }
            });
    } else {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += a * xi;
        }
    }
}

/// Returns y + a x.
pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    axpy_inplace(a, x, &mut out);
    out
}

pub fn scale_inplace(a: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= a;
    }
}

// ---------------------------------------------------------------------------
// Reorthogonalization
// ---------------------------------------------------------------------------

/// w <- (I - Q Qᵀ) w where Q is the first `ncols_active` columns of `basis`,
/// applied as two classical Gram-Schmidt passes. `coef` is scratch of length
/// at least `ncols_active`.
pub fn project_out_inplace(
    basis: &DenseMatrix,
    ncols_active: usize,
    w: &mut [f64],
    coef: &mut [f64],
) {
    assert_eq!(
        basis.nrows,
        w.len(),
        "project_out: w length {} != basis rows {}",
        w.len(),
        basis.nrows
    );
    assert!(ncols_active <= basis.ncols);
    assert!(coef.len() >= ncols_active);
    if ncols_active == 0 {
        return;
    }
    for _ in 0..2 {
        gemv_cols_t_into(basis, ncols_active, w, coef);
        gemv_cols_accum(basis, ncols_active, coef, -1.0, w);
    }
}

/// Pure form of [`project_out_inplace`].
pub fn project_out(basis: &DenseMatrix, ncols_active: usize, w: &[f64]) -> Vec<f64> {
    let mut out = w.to_vec();
    let mut coef = vec![0.0; ncols_active];
    project_out_inplace(basis, ncols_active, &mut out, &mut coef);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn csr_identity(n: usize) -> CsrMatrix {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        CsrMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    fn random_csr(rng: &mut ChaCha8Rng, m: usize, n: usize, fill: f64) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.gen::<f64>() < fill {
                    triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(m, n, &triplets).unwrap()
    }

    fn naive_gemv(m: &DenseMatrix, x: &[f64], transpose: bool) -> Vec<f64> {
        if transpose {
            (0..m.ncols())
                .map(|j| (0..m.nrows()).map(|i| m.get(i, j) * x[i]).sum())
                .collect()
        } else {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m.get(i, j) * x[j]).sum())
                .collect()
        }
    }

    #[test]
    fn spmv_identity_passes_through() {
        let a = csr_identity(3);
        assert_eq!(spmv(&a, &[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn spmv_single_entry() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0)]).unwrap();
        assert_eq!(spmv(&a, &[5.0, 7.0]), vec![14.0, 0.0]);
    }

    #[test]
    fn spmv_matches_dense_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_csr(&mut rng, 20, 15, 0.3);
        let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = a.to_dense();
        let got = spmv(&a, &x);
        let want = naive_gemv(&dense, &x, false);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn spmv_t_identity_and_single_entry() {
        let a = csr_identity(3);
        assert_eq!(spmv_t(&a, &[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0)]).unwrap();
        assert_eq!(spmv_t(&b, &[3.0, 0.0]), vec![0.0, 6.0]);
    }

    #[test]
    fn spmv_t_matches_dense_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_csr(&mut rng, 20, 15, 0.3);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense_t = a.to_dense().transpose();
        let got = spmv_t(&a, &x);
        let want = naive_gemv(&dense_t, &x, false);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn gemv_hand_cases() {
        let id = DenseMatrix::identity(2);
        assert_eq!(gemv(&id, &[4.0, 5.0], false), vec![4.0, 5.0]);
        let m = DenseMatrix::from_row_major(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gemv(&m, &[1.0, 1.0], false), vec![3.0, 7.0]);
    }

    #[test]
    fn gemv_matches_naive_both_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DenseMatrix::from_fn(30, 8, |_, _| rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (got, want) in gemv(&m, &x, false).iter().zip(naive_gemv(&m, &x, false)) {
            assert!((got - want).abs() < 1e-13);
        }
        for (got, want) in gemv(&m, &xt, true).iter().zip(naive_gemv(&m, &xt, true)) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn gemm_hand_cases() {
        let m = DenseMatrix::from_row_major(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gemm(&DenseMatrix::identity(2), &m), m);
        let d = DenseMatrix::from_row_major(2, 2, &[1.0, 0.0, 0.0, 2.0]).unwrap();
        let ones = DenseMatrix::from_row_major(2, 1, &[1.0, 1.0]).unwrap();
        let p = gemm(&d, &ones);
        assert_eq!(p.col(0), &[1.0, 2.0]);
    }

    #[test]
    fn gemm_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseMatrix::from_fn(12, 9, |_, _| rng.gen_range(-1.0..1.0));
        let b = DenseMatrix::from_fn(9, 5, |_, _| rng.gen_range(-1.0..1.0));
        let c = gemm(&a, &b);
        for i in 0..12 {
            for j in 0..5 {
                let want: f64 = (0..9).map(|l| a.get(i, l) * b.get(l, j)).sum();
                assert!((c.get(i, j) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn vector_primitives_hand_cases() {
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(axpy(-2.0, &[1.0, 1.0], &[3.0, 3.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn project_out_annihilates_span_and_keeps_complement() {
        let mut basis = DenseMatrix::zeros(3, 2);
        basis.set(0, 0, 1.0);
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let z = project_out(&basis, 1, &e1);
        assert!(norm2(&z) < 1e-15);
        let kept = project_out(&basis, 1, &e2);
        for (a, b) in kept.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn project_out_random_orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // build an orthonormal 10x4 basis by projecting random columns
        let mut q = DenseMatrix::zeros(10, 4);
        for j in 0..4 {
            let mut w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut coef = vec![0.0; j];
            project_out_inplace(&q, j, &mut w, &mut coef);
            let nrm = norm2(&w);
            for (dst, wi) in q.col_mut(j).iter_mut().zip(&w) {
                *dst = wi / nrm;
            }
        }
        let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wn = norm2(&w);
        let out = project_out(&q, 4, &w);
        for j in 0..4 {
            assert!(dot(q.col(j), &out).abs() <= 1e-13 * wn);
        }
    }

    #[test]
    fn csr_construction_validates() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 1, vec![0, 1], vec![3], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 1, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn from_triplets_sums_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 0.5), (0, 0, 0.5), (1, 1, 2.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.values(), &[1.0, 2.0]);
    }

    #[test]
    fn single_thread_runs_are_bitwise_identical() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_csr(&mut rng, 40, 30, 0.2);
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xt: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y1, z1) = pool.install(|| (spmv(&a, &x), spmv_t(&a, &xt)));
        let (y2, z2) = pool.install(|| (spmv(&a, &x), spmv_t(&a, &xt)));
        assert!(y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(z1.iter().zip(&z2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    proptest! {
        #[test]
        fn spmv_t_agrees_with_dense_transpose(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(1..24);
            let n = rng.gen_range(1..24);
            let a = random_csr(&mut rng, m, n, 0.4);
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = spmv_t(&a, &x);
            let want = gemv(&a.to_dense().transpose(), &x, false);
            let bound = 1e-13 * a.to_dense().max_abs().max(1e-300) * norm2(&x) * n as f64;
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= bound.max(1e-300));
            }
        }

        #[test]
        fn project_out_is_idempotent(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nrows = rng.gen_range(2..20);
            let ncols = rng.gen_range(1..nrows);
            let mut q = DenseMatrix::zeros(nrows, ncols);
            for j in 0..ncols {
                let mut w: Vec<f64> = (0..nrows).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut coef = vec![0.0; j];
                project_out_inplace(&q, j, &mut w, &mut coef);
                let nrm = norm2(&w);
                prop_assume!(nrm > 1e-6);
                for (dst, wi) in q.col_mut(j).iter_mut().zip(&w) {
                    *dst = wi / nrm;
                }
            }
            let w: Vec<f64> = (0..nrows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let once = project_out(&q, ncols, &w);
            let twice = project_out(&q, ncols, &once);
            let diff: Vec<f64> = once.iter().zip(&twice).map(|(a, b)| a - b).collect();
            prop_assert!(norm2(&diff) <= 1e-14 * norm2(&w));
        }
    }
}
