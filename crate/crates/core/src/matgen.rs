//! Synthetic test matrices: singular-value decay patterns, dense matrices
//! with a prescribed spectrum, and random sparse matrices with a controlled
//! number of nonzeros per row.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::SvdsError;
use crate::kernels::{norm2, project_out_inplace, CsrMatrix, DenseMatrix};

/// Requested singular-value profile.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumSpec {
    /// 10^(-4(i-1)/19) for i <= 20, then 10^-4 / (i - 20)^0.1.
    Decay1 { length: usize },
    /// i^-2
    Decay2 { length: usize },
    /// i^-3
    Decay3 { length: usize },
    /// Caller-provided values; must be finite, nonnegative, non-increasing.
    Explicit(Vec<f64>),
}

pub fn spectrum(spec: &SpectrumSpec) -> Result<Vec<f64>, SvdsError> {
    let out = match spec {
        SpectrumSpec::Decay1 { length } => (1..=*length)
            .map(|i| {
                if i <= 20 {
                    10f64.powf(-4.0 * (i as f64 - 1.0) / 19.0)
                } else {
                    1e-4 / ((i - 20) as f64).powf(0.1)
                }
            })
            .collect(),
        SpectrumSpec::Decay2 { length } => {
            (1..=*length).map(|i| (i as f64).powi(-2)).collect()
        }
        SpectrumSpec::Decay3 { length } => {
            (1..=*length).map(|i| (i as f64).powi(-3)).collect()
        }
        SpectrumSpec::Explicit(values) => {
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(SvdsError::InvalidArgument(
                    "explicit spectrum must be finite and nonnegative".into(),
                ));
            }
            for w in values.windows(2) {
                if w[1] > w[0] {
                    return Err(SvdsError::InvalidArgument(
                        "explicit spectrum must be sorted descending".into(),
                    ));
                }
            }
            values.clone()
        }
    };
    if out.is_empty() {
        return Err(SvdsError::InvalidArgument("spectrum length must be at least 1".into()));
    }
    Ok(out)
}

/// Dense m x n matrix whose singular values equal `s`: two standard-normal
/// matrices are orthonormalized column by column (two Gram-Schmidt passes
/// each) and glued around diag(s).
pub fn dense_with_spectrum(
    m: usize,
    n: usize,
    s: &[f64],
    rng: &mut impl Rng,
) -> Result<DenseMatrix, SvdsError> {
    let r = m.min(n);
    if s.len() != r {
        return Err(SvdsError::InvalidArgument(format!(
            "spectrum length {} != min(m, n) = {r}",
            s.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SvdsError::InvalidArgument(
            "spectrum must be finite and nonnegative".into(),
        ));
    }
    for w in s.windows(2) {
        if w[1] > w[0] {
            return Err(SvdsError::InvalidArgument(
                "spectrum must be sorted descending".into(),
            ));
        }
    }

    let q1 = random_orthonormal(m, r, rng);
    let q2 = random_orthonormal(n, r, rng);

    // A = Q1 diag(s) Q2^T without forming diag(s)
    let mut scaled = q1;
    for (j, &sj) in s.iter().enumerate() {
        for x in scaled.col_mut(j).iter_mut() {
            *x *= sj;
        }
    }
    Ok(crate::kernels::gemm(&scaled, &q2.transpose()))
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(rows, cols);
    let mut w = vec![0.0; rows];
    let mut coef = vec![0.0; cols];
    for j in 0..cols {
        loop {
            for x in w.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let scale = norm2(&w);
            project_out_inplace(&q, j, &mut w, &mut coef);
            let nrm = norm2(&w);
            if nrm > 0.1 * scale {
                for (dst, &wi) in q.col_mut(j).iter_mut().zip(&w) {
                    *dst = wi / nrm;
                }
                break;
            }
        }
    }
    q
}

/// Random m x n CSR matrix with exactly `nnz_per_row` nonzeros per row:
/// column positions drawn uniformly without replacement, standard-normal
/// values.
pub fn random_sparse(
    m: usize,
    n: usize,
    nnz_per_row: usize,
    rng: &mut impl Rng,
) -> Result<CsrMatrix, SvdsError> {
    if nnz_per_row > n {
        return Err(SvdsError::InvalidArgument(format!(
            "nnz_per_row = {nnz_per_row} exceeds ncols = {n}"
        )));
    }
    let mut row_ptr = Vec::with_capacity(m + 1);
    let mut col_idx = Vec::with_capacity(m * nnz_per_row);
    let mut values = Vec::with_capacity(m * nnz_per_row);
    row_ptr.push(0);
    for _ in 0..m {
        let mut cols: Vec<usize> = sample(rng, n, nnz_per_row).into_vec();
        cols.sort_unstable();
        for c in cols {
            col_idx.push(c);
            values.push(rng.sample(StandardNormal));
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix::new(m, n, row_ptr, col_idx, values)
}
