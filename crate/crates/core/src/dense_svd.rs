//! Full SVD of small dense matrices via one-sided Jacobi rotations.
//!
//! This is the factorization applied to the projected matrix inside the
//! solver, and it also serves as the brute-force reference decomposition in
//! the test suites. After restarting, the projected matrix is no longer
//! bidiagonal (it carries a dense augmentation column), so a general dense
//! routine is required here rather than a bidiagonal-only one.

use crate::error::SvdsError;
use crate::kernels::{dot, norm2, DenseMatrix};

const MAX_SWEEPS: usize = 50;
/// A column pair is rotated while |wᵢᵀwⱼ| exceeds this fraction of ‖wᵢ‖‖wⱼ‖.
/// The scale-invariant form keeps small singular pairs as orthogonal as the
/// large ones, which the orthonormality bounds below rely on.
const PAIR_TOL: f64 = 1e-15;

/// Full SVD of a p x q matrix: `u` is p x p orthonormal, `v` is q x q
/// orthonormal, `s` holds min(p, q) singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SmallSvd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

/// Computes the full SVD of a small dense matrix.
///
/// Accuracy contract: ‖UᵀU − I‖ and ‖VᵀV − I‖ stay below 1e-12 (max entry),
/// and ‖M − U diag(S) Vᵀ‖_F ≤ 1e-12 · max(1, ‖M‖_F). Fails with
/// [`SvdsError::JacobiNoConvergence`] if the sweep cap is hit.
pub fn svd_full(m: &DenseMatrix) -> Result<SmallSvd, SvdsError> {
    if m.nrows() < m.ncols() {
        let t = svd_full(&m.transpose())?;
        return Ok(SmallSvd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (u_thin, s, v) = svd_thin(m)?;
    let u = complete_basis(u_thin);
    Ok(SmallSvd { u, s, v })
}

/// Thin SVD for p >= q: returns (U p x q with orthonormal columns, S, V q x q).
/// Columns whose singular value is numerically zero are filled with an
/// orthonormal completion so U's columns are always usable.
pub(crate) fn svd_thin(
    m: &DenseMatrix,
) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix), SvdsError> {
    let p = m.nrows();
    let q = m.ncols();
    assert!(p >= q, "svd_thin expects nrows >= ncols");
    let (w, v, _) = jacobi_sweeps(m)?;

    let sig: Vec<f64> = (0..q).map(|j| norm2(w.col(j))).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| sig[b].partial_cmp(&sig[a]).unwrap().then(a.cmp(&b)));

    let s: Vec<f64> = order.iter().map(|&j| sig[j]).collect();
    let sig_max = if s.is_empty() { 0.0 } else { s[0] };
    let rank_tol = f64::EPSILON * p.max(q) as f64 * sig_max;

    let mut u = DenseMatrix::zeros(p, q);
    let mut v_out = DenseMatrix::zeros(q, q);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        v_out.col_mut(dst).copy_from_slice(v.col(src));
        if sig[src] > rank_tol && sig[src] > 0.0 {
            let inv = 1.0 / sig[src];
            for (o, &wi) in u.col_mut(dst).iter_mut().zip(w.col(src)) {
                *o = wi * inv;
            }
        } else {
            deficient.push(dst);
        }
    }
    for dst in deficient {
        fill_orthonormal_column(&mut u, dst);
    }
    apply_sign_convention(&mut u, Some(&mut v_out));
    Ok((u, s, v_out))
}

/// Cyclic one-sided Jacobi. Rotates column pairs of a working copy (and the
/// accumulated right factor) until a full sweep makes no rotation.
fn jacobi_sweeps(m: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, usize), SvdsError> {
    let q = m.ncols();
    let mut w = m.clone();
    let mut v = DenseMatrix::identity(q);
    if q < 2 {
        return Ok((w, v, 0));
    }
    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..q - 1 {
            for j in i + 1..q {
                let a = dot(w.col(i), w.col(i));
                let b = dot(w.col(j), w.col(j));
                let c = dot(w.col(i), w.col(j));
                if a == 0.0 || b == 0.0 || c.abs() <= PAIR_TOL * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut w, i, j, cs, sn);
                rotate_pair(&mut v, i, j, cs, sn);
            }
        }
        if !rotated {
            return Ok((w, v, sweep));
        }
    }
    Err(SvdsError::JacobiNoConvergence { sweeps: MAX_SWEEPS })
}

#[inline]
fn rotate_pair(m: &mut DenseMatrix, i: usize, j: usize, cs: f64, sn: f64) {
    let nrows = m.nrows();
    for r in 0..nrows {
        let wi = m.get(r, i);
        let wj = m.get(r, j);
        m.set(r, i, cs * wi - sn * wj);
        m.set(r, j, sn * wi + cs * wj);
    }
}

/// Extends a p x q column-orthonormal block to a full p x p orthonormal
/// matrix, choosing among standard basis vectors deterministically.
fn complete_basis(u_thin: DenseMatrix) -> DenseMatrix {
    let p = u_thin.nrows();
    let q = u_thin.ncols();
    let mut u = DenseMatrix::zeros(p, p);
    for j in 0..q {
        u.col_mut(j).copy_from_slice(u_thin.col(j));
    }
    for dst in q..p {
        fill_orthonormal_column(&mut u, dst);
    }
    // sign rule for the appended columns; paired columns were already
    // normalized together with V
    for dst in q..p {
        let col = u.col_mut(dst);
        let mut imax = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[imax].abs() {
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            for x in col.iter_mut() {
                *x = -*x;
            }
        }
    }
    u
}

/// Replaces column `dst` of `u` with a unit vector orthogonal to every
/// nonzero column already present. Candidates are standard basis vectors;
/// the one with the largest residual after projection wins, which keeps the
/// choice deterministic.
fn fill_orthonormal_column(u: &mut DenseMatrix, dst: usize) {
    let p = u.nrows();
    let active: Vec<usize> = (0..u.ncols())
        .filter(|&j| j != dst && norm2(u.col(j)) > 0.5)
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cand in 0..p {
        let mut w = vec![0.0; p];
        w[cand] = 1.0;
        for _ in 0..2 {
            for &j in &active {
                let c = dot(u.col(j), &w);
                for (wi, &qj) in w.iter_mut().zip(u.col(j)) {
                    *wi -= c * qj;
                }
            }
        }
        let nrm = norm2(&w);
        if best.as_ref().is_none_or(|(bn, _)| nrm > *bn) {
            best = Some((nrm, w));
        }
        if nrm > 0.9 {
            break;
        }
    }
    let (nrm, w) = best.expect("completion candidate always exists");
    assert!(nrm > 0.0, "cannot complete orthonormal basis");
    for (o, wi) in u.col_mut(dst).iter_mut().zip(&w) {
        *o = wi / nrm;
    }
}

/// Makes the largest-magnitude component of each left singular vector
/// nonnegative; the paired right vector is flipped with it.
fn apply_sign_convention(u: &mut DenseMatrix, mut v: Option<&mut DenseMatrix>) {
    for j in 0..u.ncols() {
        let col = u.col(j);
        let mut imax = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[imax].abs() {
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            for x in u.col_mut(j).iter_mut() {
                *x = -*x;
            }
            if let Some(v) = v.as_deref_mut() {
                if j < v.ncols() {
                    for x in v.col_mut(j).iter_mut() {
                        *x = -*x;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gemm;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orth_error(q: &DenseMatrix) -> f64 {
        let qtq = gemm(&q.transpose(), q);
        let mut err = 0.0f64;
        for i in 0..qtq.nrows() {
            for j in 0..qtq.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((qtq.get(i, j) - want).abs());
            }
        }
        err
    }

    fn reconstruction_error(m: &DenseMatrix, svd: &SmallSvd) -> f64 {
        let q = svd.s.len();
        let mut us = DenseMatrix::zeros(m.nrows(), q);
        for j in 0..q {
            for (o, &uij) in us.col_mut(j).iter_mut().zip(svd.u.col(j)) {
                *o = uij * svd.s[j];
            }
        }
        let v_thin = svd.v.leading(svd.v.nrows(), q);
        let rebuilt = gemm(&us, &v_thin.transpose());
        let mut diff = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                diff += (m.get(i, j) - rebuilt.get(i, j)).powi(2);
            }
        }
        diff.sqrt()
    }

    fn check_small_svd(m: &DenseMatrix, svd: &SmallSvd) {
        assert!(orth_error(&svd.u) <= 1e-12, "U orthonormality");
        assert!(orth_error(&svd.v) <= 1e-12, "V orthonormality");
        for w in svd.s.windows(2) {
            assert!(w[0] >= w[1], "singular values must be descending");
        }
        assert!(svd.s.iter().all(|&s| s >= 0.0));
        let bound = 1e-12 * m.frob_norm().max(1.0);
        assert!(
            reconstruction_error(m, svd) <= bound,
            "reconstruction error exceeds {bound}"
        );
    }

    /// Two-sided Jacobi eigensolver for symmetric matrices; used as an
    /// independent route to singular values via the Gram matrix.
    fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    off = off.max(m.get(i, j).abs());
                }
            }
            if off <= 1e-14 * m.frob_norm().max(1e-300) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    if apq.abs() <= 1e-18 * m.frob_norm().max(1e-300) {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..n {
                        let mrp = m.get(r, p);
                        let mrq = m.get(r, q);
                        m.set(r, p, c * mrp - s * mrq);
                        m.set(r, q, s * mrp + c * mrq);
                    }
                    for r in 0..n {
                        let mpr = m.get(p, r);
                        let mqr = m.get(q, r);
                        m.set(p, r, c * mpr - s * mqr);
                        m.set(q, r, s * mpr + c * mqr);
                    }
                }
            }
        }
        let mut eigs: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
        eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eigs
    }

    #[test]
    fn diagonal_matrix_sorted() {
        let m = DenseMatrix::from_row_major(
            3,
            3,
            &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0],
        )
        .unwrap();
        let svd = svd_full(&m).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-14);
        assert!((svd.s[1] - 2.0).abs() < 1e-14);
        assert!((svd.s[2] - 1.0).abs() < 1e-14);
        check_small_svd(&m, &svd);
        // permuted identity up to sign: every column has a single unit entry
        for j in 0..3 {
            let col = svd.u.col(j);
            let big: Vec<f64> = col.iter().filter(|x| x.abs() > 0.5).cloned().collect();
            assert_eq!(big.len(), 1);
            assert!((big[0].abs() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_matrix_has_unit_singular_values() {
        let m = DenseMatrix::from_row_major(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let svd = svd_full(&m).unwrap();
        assert!((svd.s[0] - 1.0).abs() < 1e-14);
        assert!((svd.s[1] - 1.0).abs() < 1e-14);
        check_small_svd(&m, &svd);
    }

    #[test]
    fn random_square_matches_gram_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = DenseMatrix::from_fn(9, 9, |_, _| rng.gen_range(-1.0..1.0));
        let svd = svd_full(&m).unwrap();
        check_small_svd(&m, &svd);
        let gram = gemm(&m.transpose(), &m);
        let eigs = symmetric_eigenvalues(&gram);
        for (s, e) in svd.s.iter().zip(&eigs) {
            let want = e.max(0.0).sqrt();
            assert!(
                (s - want).abs() <= 1e-10 * want.max(1.0),
                "sigma {s} vs gram root {want}"
            );
        }
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DenseMatrix::from_fn(7, 5, |_, _| rng.gen_range(-1.0..1.0));
        let scaled =
            DenseMatrix::from_fn(7, 5, |i, j| 3.5 * m.get(i, j));
        let s1 = svd_full(&m).unwrap().s;
        let s2 = svd_full(&scaled).unwrap().s;
        for (a, b) in s1.iter().zip(&s2) {
            assert!((3.5 * a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn transpose_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = DenseMatrix::from_fn(8, 12, |_, _| rng.gen_range(-1.0..1.0));
        let s1 = svd_full(&m).unwrap().s;
        let s2 = svd_full(&m.transpose()).unwrap().s;
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn rank_deficient_and_zero_matrices() {
        let z = DenseMatrix::zeros(4, 3);
        let svd = svd_full(&z).unwrap();
        assert!(svd.s.iter().all(|&s| s == 0.0));
        check_small_svd(&z, &svd);

        // two identical columns
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let col: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DenseMatrix::from_fn(6, 3, |i, j| if j < 2 { col[i] } else { i as f64 * 0.1 });
        let svd = svd_full(&m).unwrap();
        check_small_svd(&m, &svd);
        assert!(svd.s[2] <= 1e-12 * svd.s[0]);
    }

    #[test]
    fn invariants_hold_across_many_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..1000 {
            let p = rng.gen_range(1..=64);
            let q = rng.gen_range(1..=64);
            let m = DenseMatrix::from_fn(p, q, |_, _| rng.gen_range(-1.0..1.0));
            let svd = svd_full(&m).unwrap();
            assert_eq!(svd.s.len(), p.min(q));
            check_small_svd(&m, &svd);
            if round % 100 == 0 {
                // spot-check against the Gram route on a subsample
                let gram = gemm(&m.transpose(), &m);
                let eigs = symmetric_eigenvalues(&gram);
                for (s, e) in svd.s.iter().zip(&eigs).take(3) {
                    let want = e.max(0.0).sqrt();
                    assert!((s - want).abs() <= 1e-9 * want.max(1.0));
                }
            }
        }
    }
}
