//! The restarted truncated SVD driver: convergence testing on the projected
//! matrix, the augmented restart that preserves converged Ritz vectors while
//! keeping memory bounded, final factor assembly, and an operation-count
//! model for the whole run.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense_svd::{svd_full, svd_thin, SmallSvd};
use crate::error::SvdsError;
use crate::kernels::{gemm_prefix_into, gemv_cols_accum, norm2, project_out_inplace, DenseMatrix, MatVec};
use crate::lanczos::{self, replace_with_random, LanczosState};

/// Matrices with at most this many elements may be densified when the
/// Krylov subspace cannot be sized (min(m, n) too small for the rank).
const DENSE_FALLBACK_LIMIT: usize = 100_000_000;

/// Solver options. `subspace = None` picks t = max(15, 3k) clamped to
/// min(m, n) - 1; `threads = 0` uses all available cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdsOptions {
    pub k: usize,
    pub tol: f64,
    pub subspace: Option<usize>,
    pub restarts: usize,
    pub seed: u64,
    pub threads: usize,
}

impl SvdsOptions {
    pub fn new(k: usize) -> Self {
        SvdsOptions {
            k,
            tol: 1e-10,
            subspace: None,
            restarts: 10,
            seed: 0,
            threads: 0,
        }
    }
}

/// Top-k singular triplets with their per-triplet relative residuals and run
/// accounting. Returned even when unconverged; `converged` says whether every
/// residual passed the tolerance at the final check.
#[derive(Debug, Clone)]
pub struct SvdsResult {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
    pub residuals: Vec<f64>,
    pub restarts: usize,
    pub converged: bool,
    pub matvecs: usize,
    pub wall_time: Duration,
}

/// Cost constants for [`estimate_flops`]; both default to 1 so the estimate
/// is a pure operation count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopModel {
    pub c_mul: f64,
    pub c_svd: f64,
}

impl Default for FlopModel {
    fn default() -> Self {
        FlopModel {
            c_mul: 1.0,
            c_svd: 1.0,
        }
    }
}

/// Per-phase operation counts for one solve.
///
/// `restart_work` charges, per restart, the seeding product plus (t - k)
/// continued iterations; each continued iteration's two sparse products and
/// its reorthogonalization are both counted inside that per-iteration term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopBreakdown {
    /// Sparse/dense matrix-vector products of the initial bidiagonalization.
    pub lbp_matvec: f64,
    /// Reorthogonalization cost of the initial bidiagonalization.
    pub lbp_reorth: f64,
    /// Basis-times-small-factor products in restarts and final assembly.
    pub assembly_gemm: f64,
    /// Small dense SVDs of the projected matrix.
    pub small_svd: f64,
    /// Restart seeding plus the continued iterations after each restart.
    pub restart_work: f64,
}

impl FlopBreakdown {
    pub fn total(&self) -> f64 {
        self.lbp_matvec + self.lbp_reorth + self.assembly_gemm + self.small_svd + self.restart_work
    }
}

/// Evaluates the solve cost model term by term. `nnz = 0` signals a dense
/// matrix, counted as m * n stored entries.
pub fn estimate_flops(
    m: usize,
    n: usize,
    nnz: usize,
    k: usize,
    t: usize,
    restarts: usize,
    model: &FlopModel,
) -> FlopBreakdown {
    let nnz = if nnz == 0 { m * n } else { nnz } as f64;
    let (m, n, k, t, r) = (m as f64, n as f64, k as f64, t as f64, restarts as f64);
    let mn = m + n;
    FlopBreakdown {
        lbp_matvec: (2.0 * t + 1.0) * model.c_mul * nnz,
        lbp_reorth: (t * t + 3.0 * t + 1.0) * model.c_mul * mn,
        assembly_gemm: (r + 1.0) * model.c_mul * mn * t * k,
        small_svd: (r + 1.0) * model.c_svd * t * t * t,
        restart_work: r
            * (model.c_mul * (nnz + m * k)
                + (t - k) * (2.0 * model.c_mul * nnz + (t + k + 4.0) * model.c_mul * mn)),
    }
}

/// Resolves the subspace dimension: the requested value (or max(15, 3k))
/// clamped to min(m, n) - 1. Fails when even the clamped value cannot hold
/// k plus the two extra directions the restart needs.
pub fn resolve_subspace(
    m: usize,
    n: usize,
    k: usize,
    requested: Option<usize>,
) -> Result<usize, SvdsError> {
    let min_dim = m.min(n);
    let cap = min_dim.saturating_sub(1);
    let t = requested.unwrap_or_else(|| 15usize.max(3 * k)).min(cap);
    if t < k + 2 {
        return Err(SvdsError::SubspaceTooSmall { k, t, min_dim });
    }
    Ok(t)
}

/// Maps `threads = 0` to the machine's available parallelism.
pub fn resolve_threads(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }
}

/// Computes the top-k singular triplets of `a`.
///
/// Runs Lanczos bidiagonalization with full reorthogonalization over a
/// workspace allocated once up front, checks the cheap per-triplet residual
/// |T(t, t+1) * u_hat_j(t)| / sigma_hat_j after each pass, and performs up to
/// `restarts - 1` augmented restarts. Matrices too small to host the subspace
/// are decomposed densely instead. All randomness comes from `opts.seed`;
/// with `threads = 1` the result is bitwise reproducible.
pub fn truncated_svd(a: &dyn MatVec, opts: &SvdsOptions) -> Result<SvdsResult, SvdsError> {
    let started = Instant::now();
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Err(SvdsError::InvalidArgument("matrix must be nonempty".into()));
    }
    if opts.k < 1 || opts.k > m.min(n) {
        return Err(SvdsError::InvalidArgument(format!(
            "rank k = {} out of range for a {m}x{n} matrix",
            opts.k
        )));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(SvdsError::InvalidArgument("tol must be positive".into()));
    }
    if opts.restarts < 1 {
        return Err(SvdsError::InvalidArgument("restart cap must be at least 1".into()));
    }
    let threads = resolve_threads(opts.threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SvdsError::ThreadPool(e.to_string()))?;
    let mut result = pool.install(|| match resolve_subspace(m, n, opts.k, opts.subspace) {
        Ok(t) => lanczos_solve(a, opts, t),
        Err(SvdsError::SubspaceTooSmall { .. })
            if m.saturating_mul(n) <= DENSE_FALLBACK_LIMIT =>
        {
            dense_fallback(a, opts)
        }
        Err(e) => Err(e),
    })?;
    result.wall_time = started.elapsed();
    Ok(result)
}

fn lanczos_solve(a: &dyn MatVec, opts: &SvdsOptions, t: usize) -> Result<SvdsResult, SvdsError> {
    let k = opts.k;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut state = LanczosState::new(a.nrows(), a.ncols(), t);
    lanczos::start(a, &mut rng, &mut state);

    let mut restarts = 0;
    loop {
        let tsvd = svd_full(&state.proj().leading(t, t))?;
        let (converged, residuals) = check_convergence(state.proj(), &tsvd, k, opts.tol)?;
        if converged || restarts + 1 >= opts.restarts {
            let (u, s, v) = assemble(&state, &tsvd, k);
            return Ok(SvdsResult {
                u,
                s,
                v,
                residuals,
                restarts,
                converged,
                matvecs: state.matvecs(),
                wall_time: Duration::ZERO,
            });
        }
        restart(a, &mut state, &tsvd, k, &mut rng);
        lanczos::resume(a, &mut rng, &mut state);
        restarts += 1;
    }
}

/// Residual test on the projected matrix: residual_j =
/// |T(t, t+1) * u_hat_j(t)| / sigma_hat_j for j <= k, converged when all stay
/// below `tol`. A zero singular value with a vanishing numerator counts as
/// converged with residual zero; with a non-vanishing numerator it is a rank
/// deficiency and reported as an error.
pub fn check_convergence(
    proj: &DenseMatrix,
    tsvd: &SmallSvd,
    k: usize,
    tol: f64,
) -> Result<(bool, Vec<f64>), SvdsError> {
    let t = tsvd.s.len();
    assert!(k <= t, "k = {k} exceeds projected block size {t}");
    assert!(proj.nrows() >= t && proj.ncols() > t);
    let beta_t = proj.get(t - 1, t);
    let mut residuals = Vec::with_capacity(k);
    for j in 0..k {
        let numerator = (beta_t * tsvd.u.get(t - 1, j)).abs();
        let sigma = tsvd.s[j];
        if sigma == 0.0 {
            if numerator <= 1e-14 {
                residuals.push(0.0);
            } else {
                return Err(SvdsError::RankDeficient { index: j });
            }
        } else {
            residuals.push(numerator / sigma);
        }
    }
    let converged = residuals.iter().all(|&r| r < tol);
    Ok((converged, residuals))
}

/// Augmented restart: replaces the leading basis columns with the current
/// Ritz vectors, seeds the next pair from v_{t+1} and A v_{t+1} minus its
/// Ritz components, and rewrites T as diag(sigma) plus the augmentation
/// column. Leaves the state with k+1 filled pairs ready to resume.
pub fn restart(
    a: &dyn MatVec,
    state: &mut LanczosState,
    tsvd: &SmallSvd,
    k: usize,
    rng: &mut impl Rng,
) {
    let t = state.subspace;
    assert_eq!(state.filled, t + 1, "restart requires a completed pass");
    assert_eq!(tsvd.s.len(), t, "projected SVD size disagrees with the state");
    assert!(k + 2 <= t, "rank {k} leaves no room to continue in subspace {t}");

    let beta_t = state.proj.get(t - 1, t);

    // Ritz vectors: U(:, 1:t) * Uhat(:, 1:k) and V(:, 1:t) * Vhat(:, 1:k)
    gemm_prefix_into(&state.left, t, &tsvd.u, k, &mut state.scratch_left);
    gemm_prefix_into(&state.right, t, &tsvd.v, k, &mut state.scratch_right);

    for (j, c) in state.coef[..k].iter_mut().enumerate() {
        *c = beta_t * tsvd.u.get(t - 1, j);
    }

    // u_{k+1} = A v_{t+1} - sum_j coef_j * ritz_u_j
    a.apply_into(state.right.col(t), &mut state.tmp_m);
    state.matvecs += 1;
    gemv_cols_accum(&state.scratch_left, k, &state.coef, -1.0, &mut state.tmp_m);

    // rewrite T before coef is reused as projection scratch
    state.proj.fill_zero();
    for j in 0..k {
        state.proj.set(j, j, tsvd.s[j]);
        state.proj.set(j, k, state.coef[j]);
    }

    project_out_inplace(&state.scratch_left, k, &mut state.tmp_m, &mut state.coef);
    let alpha = norm2(&state.tmp_m);
    if alpha <= state.breakdown_threshold() {
        state.proj.set(k, k, 0.0);
        replace_with_random(&state.scratch_left, k, rng, &mut state.tmp_m, &mut state.coef);
    } else {
        state.proj.set(k, k, alpha);
        state.coeff_scale = state.coeff_scale.max(alpha);
        let inv = 1.0 / alpha;
        for x in state.tmp_m.iter_mut() {
            *x *= inv;
        }
    }

    // write the new bases: v_{k+1} takes v_{t+1}, then the Ritz columns
    state.right.copy_col_within(t, k);
    for j in 0..k {
        state.left.col_mut(j).copy_from_slice(state.scratch_left.col(j));
        state.right.col_mut(j).copy_from_slice(state.scratch_right.col(j));
    }
    state.left.col_mut(k).copy_from_slice(&state.tmp_m);
    state.filled = k + 1;
}

/// Lifts the projected factors through the bases:
/// (U(:, 1:t) Uhat(:, 1:k), diag(Sigma)(1:k), V(:, 1:t) Vhat(:, 1:k)).
pub fn assemble(
    state: &LanczosState,
    tsvd: &SmallSvd,
    k: usize,
) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let t = state.subspace;
    assert!(k <= tsvd.s.len());
    let mut u = DenseMatrix::zeros(state.left.nrows(), k);
    gemm_prefix_into(&state.left, t, &tsvd.u, k, &mut u);
    let mut v = DenseMatrix::zeros(state.right.nrows(), k);
    gemm_prefix_into(&state.right, t, &tsvd.v, k, &mut v);
    (u, tsvd.s[..k].to_vec(), v)
}

/// Full dense decomposition for matrices too small for the Krylov path.
fn dense_fallback(a: &dyn MatVec, opts: &SvdsOptions) -> Result<SvdsResult, SvdsError> {
    let (m, n) = (a.nrows(), a.ncols());
    let k = opts.k;
    let mut matvecs = 0usize;

    let dense = if n <= m {
        let mut d = DenseMatrix::zeros(m, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for j in 0..n {
            e[j] = 1.0;
            a.apply_into(&e, &mut col);
            e[j] = 0.0;
            d.col_mut(j).copy_from_slice(&col);
            matvecs += 1;
        }
        d
    } else {
        let mut dt = DenseMatrix::zeros(n, m);
        let mut e = vec![0.0; m];
        let mut row = vec![0.0; n];
        for i in 0..m {
            e[i] = 1.0;
            a.apply_transpose_into(&e, &mut row);
            e[i] = 0.0;
            dt.col_mut(i).copy_from_slice(&row);
            matvecs += 1;
        }
        dt.transpose()
    };

    let (u_all, s_all, v_all) = if m >= n {
        svd_thin(&dense)?
    } else {
        let (ut, s, vt) = svd_thin(&dense.transpose())?;
        (vt, s, ut)
    };

    let mut u = DenseMatrix::zeros(m, k);
    let mut v = DenseMatrix::zeros(n, k);
    for j in 0..k {
        u.col_mut(j).copy_from_slice(u_all.col(j));
        v.col_mut(j).copy_from_slice(v_all.col(j));
    }
    let s: Vec<f64> = s_all[..k].to_vec();

    let mut residuals = Vec::with_capacity(k);
    let mut back = vec![0.0; n];
    for j in 0..k {
        a.apply_transpose_into(u.col(j), &mut back);
        matvecs += 1;
        for (b, &vi) in back.iter_mut().zip(v.col(j)) {
            *b -= s[j] * vi;
        }
        let numerator = norm2(&back);
        if s[j] == 0.0 {
            if numerator <= 1e-14 {
                residuals.push(0.0);
            } else {
                return Err(SvdsError::RankDeficient { index: j });
            }
        } else {
            residuals.push(numerator / s[j]);
        }
    }
    let converged = residuals.iter().all(|&r| r < opts.tol);
    Ok(SvdsResult {
        u,
        s,
        v,
        residuals,
        restarts: 0,
        converged,
        matvecs,
        wall_time: Duration::ZERO,
    })
}
