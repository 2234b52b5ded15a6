//! Lanczos bidiagonalization with full reorthogonalization over a
//! preallocated workspace, resumable so the solver can restart it with
//! preserved Ritz vectors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels::{axpy_inplace, norm2, project_out_inplace, DenseMatrix, MatVec};

/// A fresh alpha/beta below `BREAKDOWN_REL` times the largest coefficient
/// seen so far is treated as exact zero and the offending vector replaced by
/// a random one orthogonal to the current basis.
const BREAKDOWN_REL: f64 = 1e-14;

/// Resumable bidiagonalization state sized for a subspace dimension `t`:
/// `left` holds up to t+1 basis columns of length m, `right` up to t+1 (plus
/// one spare) of length n, and `proj` is the (t+1) x (t+1) projected matrix.
/// Everything, including the scratch used by restarts, is allocated here once
/// per solve and reused across restarts.
#[derive(Debug, Clone)]
pub struct LanczosState {
    pub(crate) left: DenseMatrix,
    pub(crate) right: DenseMatrix,
    pub(crate) proj: DenseMatrix,
    pub(crate) filled: usize,
    pub(crate) subspace: usize,
    pub(crate) matvecs: usize,
    pub(crate) coeff_scale: f64,
    pub(crate) tmp_m: Vec<f64>,
    pub(crate) tmp_n: Vec<f64>,
    pub(crate) coef: Vec<f64>,
    pub(crate) scratch_left: DenseMatrix,
    pub(crate) scratch_right: DenseMatrix,
}

impl LanczosState {
    pub fn new(m: usize, n: usize, t: usize) -> Self {
        assert!(t >= 1, "subspace dimension must be at least 1");
        assert!(t < m.min(n), "subspace dimension {t} needs t + 1 <= min({m}, {n})");
        LanczosState {
            left: DenseMatrix::zeros(m, t + 1),
            right: DenseMatrix::zeros(n, t + 2),
            proj: DenseMatrix::zeros(t + 1, t + 1),
            filled: 0,
            subspace: t,
            matvecs: 0,
            coeff_scale: 0.0,
            tmp_m: vec![0.0; m],
            tmp_n: vec![0.0; n],
            coef: vec![0.0; t + 2],
            scratch_left: DenseMatrix::zeros(m, t),
            scratch_right: DenseMatrix::zeros(n, t),
        }
    }

    /// Left basis workspace; the first `filled` columns are valid.
    pub fn left(&self) -> &DenseMatrix {
        &self.left
    }

    pub fn right(&self) -> &DenseMatrix {
        &self.right
    }

    /// The projected matrix T.
    pub fn proj(&self) -> &DenseMatrix {
        &self.proj
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn subspace(&self) -> usize {
        self.subspace
    }

    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    /// T(t, t+1) in 1-based terms: the trailing off-diagonal coefficient the
    /// residual estimate is built from.
    pub fn beta_last(&self) -> f64 {
        self.proj.get(self.subspace - 1, self.subspace)
    }

    pub(crate) fn breakdown_threshold(&self) -> f64 {
        BREAKDOWN_REL * if self.coeff_scale > 0.0 { self.coeff_scale } else { 1.0 }
    }
}

/// Runs the bidiagonalization from scratch: draws a random unit start vector,
/// then iterates until t+1 basis pairs are filled, reorthogonalizing every
/// new vector against all previously filled columns.
pub fn start(a: &dyn MatVec, rng: &mut impl Rng, state: &mut LanczosState) {
    start_with_reorth(a, rng, state, true);
}

/// `start` with the reorthogonalization passes optionally disabled. The
/// disabled form exists to demonstrate the loss of orthogonality the full
/// scheme prevents; it is not meant for production use.
pub fn start_with_reorth(
    a: &dyn MatVec,
    rng: &mut impl Rng,
    state: &mut LanczosState,
    reorth: bool,
) {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(state.left.nrows(), m, "workspace sized for a different matrix");
    assert_eq!(state.right.nrows(), n, "workspace sized for a different matrix");

    state.proj.fill_zero();
    state.filled = 0;
    state.matvecs = 0;
    state.coeff_scale = 0.0;

    // start vector: standard-normal entries, normalized
    loop {
        for x in state.right.col_mut(0).iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let nrm = norm2(state.right.col(0));
        if nrm > 0.0 {
            let inv = 1.0 / nrm;
            for x in state.right.col_mut(0).iter_mut() {
                *x *= inv;
            }
            break;
        }
    }

    a.apply_into(state.right.col(0), &mut state.tmp_m);
    state.matvecs += 1;
    let alpha = norm2(&state.tmp_m);
    if alpha <= state.breakdown_threshold() {
        state.proj.set(0, 0, 0.0);
        replace_with_random(&state.left, 0, rng, &mut state.tmp_m, &mut state.coef);
    } else {
        state.proj.set(0, 0, alpha);
        state.coeff_scale = state.coeff_scale.max(alpha);
        let inv = 1.0 / alpha;
        for x in state.tmp_m.iter_mut() {
            *x *= inv;
        }
    }
    state.left.col_mut(0).copy_from_slice(&state.tmp_m);
    state.filled = 1;

    advance(a, rng, state, state.subspace + 1, reorth);
}

/// Continues the iteration from the current `filled` count until t+1 basis
/// pairs exist. Used after a restart has reset the state to k+1 pairs.
pub fn resume(a: &dyn MatVec, rng: &mut impl Rng, state: &mut LanczosState) {
    assert!(state.filled >= 1, "resume requires an initialized state");
    advance(a, rng, state, state.subspace + 1, true);
}

/// Core loop. Iteration i (1-based, i = `filled`) computes the pair
/// (v_{i+1}, u_{i+1}) from the three-term recurrence, reorthogonalizes each
/// new vector against all filled columns of its basis, and records the new
/// alpha/beta in the projected matrix.
pub(crate) fn advance(
    a: &dyn MatVec,
    rng: &mut impl Rng,
    state: &mut LanczosState,
    target_pairs: usize,
    reorth: bool,
) {
    assert!(target_pairs <= state.subspace + 1);
    while state.filled < target_pairs {
        let i = state.filled; // paper's 1-based iteration index

        // v_{i+1} = A^T u_i - alpha_i v_i
        let alpha_i = state.proj.get(i - 1, i - 1);
        a.apply_transpose_into(state.left.col(i - 1), &mut state.tmp_n);
        state.matvecs += 1;
        axpy_inplace(-alpha_i, state.right.col(i - 1), &mut state.tmp_n);
        if reorth {
            project_out_inplace(&state.right, i, &mut state.tmp_n, &mut state.coef);
        }
        let beta = norm2(&state.tmp_n);
        if beta <= state.breakdown_threshold() {
            state.proj.set(i - 1, i, 0.0);
            replace_with_random(&state.right, i, rng, &mut state.tmp_n, &mut state.coef);
        } else {
            state.proj.set(i - 1, i, beta);
            state.coeff_scale = state.coeff_scale.max(beta);
            let inv = 1.0 / beta;
            for x in state.tmp_n.iter_mut() {
                *x *= inv;
            }
        }
        state.right.col_mut(i).copy_from_slice(&state.tmp_n);

        // u_{i+1} = A v_{i+1} - beta_i u_i
        let beta_i = state.proj.get(i - 1, i);
        a.apply_into(state.right.col(i), &mut state.tmp_m);
        state.matvecs += 1;
        axpy_inplace(-beta_i, state.left.col(i - 1), &mut state.tmp_m);
        if reorth {
            project_out_inplace(&state.left, i, &mut state.tmp_m, &mut state.coef);
        }
        let alpha = norm2(&state.tmp_m);
        if alpha <= state.breakdown_threshold() {
            state.proj.set(i, i, 0.0);
            replace_with_random(&state.left, i, rng, &mut state.tmp_m, &mut state.coef);
        } else {
            state.proj.set(i, i, alpha);
            state.coeff_scale = state.coeff_scale.max(alpha);
            let inv = 1.0 / alpha;
            for x in state.tmp_m.iter_mut() {
                *x *= inv;
            }
        }
        state.left.col_mut(i).copy_from_slice(&state.tmp_m);

        state.filled += 1;
    }
}

/// Draws random vectors until one keeps a usable component orthogonal to the
/// first `ncols_active` basis columns, then normalizes it into `out`.
pub(crate) fn replace_with_random(
    basis: &DenseMatrix,
    ncols_active: usize,
    rng: &mut impl Rng,
    out: &mut [f64],
    coef: &mut [f64],
) {
    loop {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let scale = norm2(out);
        project_out_inplace(basis, ncols_active, out, coef);
        let nrm = norm2(out);
        if nrm > 0.1 * scale {
            let inv = 1.0 / nrm;
            for x in out.iter_mut() {
                *x *= inv;
            }
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense_svd::svd_full;
    use crate::kernels::{gemm, CsrMatrix};
    use crate::matgen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orth_error(q: &DenseMatrix, cols: usize) -> f64 {
        let prefix = q.leading(q.nrows(), cols);
        let qtq = gemm(&prefix.transpose(), &prefix);
        let mut err = 0.0f64;
        for i in 0..cols {
            for j in 0..cols {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((qtq.get(i, j) - want).abs());
            }
        }
        err
    }

    #[test]
    fn diagonal_matrix_recovers_spectrum_in_projected_matrix() {
        let a = DenseMatrix::from_row_major(
            3,
            3,
            &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let mut state = LanczosState::new(3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        start(&a, &mut rng, &mut state);
        assert_eq!(state.filled(), 3);
        let svd = svd_full(state.proj()).unwrap();
        for (got, want) in svd.s.iter().zip(&[3.0, 2.0, 1.0]) {
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn scaled_identity_exercises_breakdown_and_stays_orthonormal() {
        let c = 4.0;
        let a = DenseMatrix::from_fn(5, 5, |i, j| if i == j { c } else { 0.0 });
        let mut state = LanczosState::new(5, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        start(&a, &mut rng, &mut state);
        assert!((state.proj().get(0, 0) - c).abs() < 1e-12);
        // every off-diagonal beta collapses on a scaled identity
        for i in 1..=3 {
            assert_eq!(state.proj().get(i - 1, i), 0.0);
        }
        assert!(orth_error(state.left(), state.filled()) <= 1e-10);
        assert!(orth_error(state.right(), state.filled()) <= 1e-10);
    }

    #[test]
    fn recurrence_residual_holds_on_random_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = matgen::random_sparse(40, 30, 6, &mut rng).unwrap();
        let t = 9;
        let mut state = LanczosState::new(40, 30, t);
        start(&a, &mut rng, &mut state);

        let svd = svd_full(state.proj()).unwrap();
        let sigma_max = svd.s[0];

        for i in 1..=t {
            // A^T u_i = alpha_i v_i + beta_i v_{i+1}
            let mut lhs = vec![0.0; 30];
            a.apply_transpose_into(state.left().col(i - 1), &mut lhs);
            axpy_inplace(-state.proj().get(i - 1, i - 1), state.right().col(i - 1), &mut lhs);
            axpy_inplace(-state.proj().get(i - 1, i), state.right().col(i), &mut lhs);
            assert!(norm2(&lhs) <= 1e-10 * sigma_max, "row recurrence at {i}");

            // A v_{i+1} = beta_i u_i + alpha_{i+1} u_{i+1}
            let mut rhs = vec![0.0; 40];
            a.apply_into(state.right().col(i), &mut rhs);
            axpy_inplace(-state.proj().get(i - 1, i), state.left().col(i - 1), &mut rhs);
            axpy_inplace(-state.proj().get(i, i), state.left().col(i), &mut rhs);
            assert!(norm2(&rhs) <= 1e-10 * sigma_max, "column recurrence at {i}");
        }
    }

    #[test]
    fn resume_advances_one_pair_and_preserves_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DenseMatrix::from_fn(20, 20, |_, _| rng.gen_range(-1.0..1.0));
        let t = 7;
        let mut state = LanczosState::new(20, 20, t);

        // initialize and stop one pair short of completion
        state.proj.fill_zero();
        state.filled = 0;
        state.matvecs = 0;
        state.coeff_scale = 0.0;
        for x in state.right.col_mut(0).iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let nrm = norm2(state.right.col(0));
        for x in state.right.col_mut(0).iter_mut() {
            *x /= nrm;
        }
        a.apply_into(state.right.col(0), &mut state.tmp_m);
        state.matvecs += 1;
        let alpha = norm2(&state.tmp_m);
        state.proj.set(0, 0, alpha);
        state.coeff_scale = alpha;
        for x in state.tmp_m.iter_mut() {
            *x /= alpha;
        }
        let tmp = state.tmp_m.clone();
        state.left.col_mut(0).copy_from_slice(&tmp);
        state.filled = 1;
        advance(&a, &mut rng, &mut state, t, true);
        assert_eq!(state.filled(), t);

        resume(&a, &mut rng, &mut state);
        assert_eq!(state.filled(), t + 1);
        assert!(orth_error(state.left(), t + 1) <= 1e-10);
        assert!(orth_error(state.right(), t + 1) <= 1e-10);
    }

    #[test]
    fn matvec_count_matches_loop_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = matgen::random_sparse(50, 40, 5, &mut rng).unwrap();
        let t = 12;
        let mut state = LanczosState::new(50, 40, t);
        start(&a, &mut rng, &mut state);
        assert_eq!(state.matvecs(), 1 + 2 * t);
    }

    #[test]
    fn orthogonality_is_lost_without_reorthogonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = matgen::spectrum(&matgen::SpectrumSpec::Decay1 { length: 300 }).unwrap();
        let a = matgen::dense_with_spectrum(400, 300, &s, &mut rng).unwrap();

        let mut with = LanczosState::new(400, 300, 30);
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        start(&a, &mut rng_a, &mut with);
        assert!(orth_error(with.left(), with.filled()) <= 1e-10);
        assert!(orth_error(with.right(), with.filled()) <= 1e-10);

        let mut without = LanczosState::new(400, 300, 30);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        start_with_reorth(&a, &mut rng_b, &mut without, false);
        let worst = orth_error(without.left(), without.filled())
            .max(orth_error(without.right(), without.filled()));
        assert!(
            worst > 1e-10,
            "expected visible orthogonality loss, saw {worst}"
        );
    }

    #[test]
    fn csr_and_dense_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut triplets = Vec::new();
        for i in 0..25 {
            for j in 0..20 {
                if rng.gen::<f64>() < 0.3 {
                    triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let sp = CsrMatrix::from_triplets(25, 20, &triplets).unwrap();
        let de = sp.to_dense();

        let mut s1 = LanczosState::new(25, 20, 6);
        let mut s2 = LanczosState::new(25, 20, 6);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        start(&sp, &mut r1, &mut s1);
        start(&de, &mut r2, &mut s2);
        let v1 = svd_full(s1.proj()).unwrap().s;
        let v2 = svd_full(s2.proj()).unwrap().s;
        for (a, b) in v1.iter().zip(&v2) {
            assert!((a - b).abs() <= 1e-10 * b.max(1.0));
        }
    }
}
