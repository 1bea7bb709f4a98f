//! Recovery of the Brunovsky weights from an estimated Markov matrix.
//!
//! The estimated truncated transfer function is matched against its
//! closed-form Brunovsky expression `C W(z) / q(z) + D` at `n + p n m`
//! unit-circle frequencies. Each output/input index pair contributes one
//! scalar equation per frequency, linear in the unknowns
//! `{a_1..a_n}` and the entries of `C`; stacking them gives an
//! overdetermined complex system `Gamma rho = kappa` solved by SVD least
//! squares. `D` needs no processing: it is Markov block zero.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::estimation::{
    offline_sgd_iteration, offline_sgd_prepare, NormalEquations, OnlineSgd, RegressorWindow,
};
use crate::lti::{BrunovskySystem, MarkovMatrix, SystemDims, Trajectory, C64};

/// Relative screen below which a frequency is considered to sit on a zero of
/// the truncated transfer function.
const ZERO_SCREEN_RELATIVE: f64 = 1e-10;

/// Retries granted to a screened-out frequency before giving up.
const MAX_SCREEN_RETRIES: usize = 5;

/// Imaginary residuals above this are flagged (never rejected).
pub const IMAG_WARN_THRESHOLD: f64 = 1e-6;

/// Matching frequencies on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<C64>,
}

impl FrequencyGrid {
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The block column `[0; z^{-1} I; z^{-2} I; ...; z^{-T+1} I]` of shape
/// `(m T) x m`; `Theta * vartheta(z)` is the truncated transfer function
/// minus `D`.
pub fn vartheta(z: C64, dims: SystemDims, truncation: usize) -> Result<DMatrix<C64>> {
    if z.norm() == 0.0 {
        return Err(SysIdError::InvalidParameter("z must be nonzero".into()));
    }
    let m = dims.m;
    let mut out = DMatrix::zeros(m * truncation, m);
    let zinv = C64::new(1.0, 0.0) / z;
    let mut pw = C64::new(1.0, 0.0);
    for blk in 1..truncation {
        pw *= zinv;
        for k in 0..m {
            out[(blk * m + k, k)] = pw;
        }
    }
    Ok(out)
}

/// `Theta * vartheta(z)` computed block-wise:
/// `sum_{t=1}^{T-1} z^{-t} * block_t(Theta)`, a `p x m` complex matrix.
pub fn theta_vartheta(theta: &MarkovMatrix, z: C64) -> DMatrix<C64> {
    let p = theta.output_dim();
    let m = theta.input_dim();
    let full = theta.as_matrix();
    let mut acc = DMatrix::zeros(p, m);
    let zinv = C64::new(1.0, 0.0) / z;
    let mut pw = C64::new(1.0, 0.0);
    for t in 1..theta.truncation() {
        pw *= zinv;
        for c in 0..m {
            for r in 0..p {
                acc[(r, c)] += pw * full[(r, t * m + c)];
            }
        }
    }
    acc
}

/// Picks `K = n + p n m` frequencies `z_k = exp(i pi (k-1) / K)`, screening
/// each against zeros of the truncated transfer estimate and rotating
/// failures by a fixed offset.
pub fn make_frequency_grid(dims: SystemDims, theta_hat: &MarkovMatrix) -> Result<FrequencyGrid> {
    let k_count = dims.frequency_count();
    let tau_zero = ZERO_SCREEN_RELATIVE * theta_hat.as_matrix().norm();
    let delta = std::f64::consts::PI / (7.0 * k_count as f64);
    let mut points = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let base = std::f64::consts::PI * k as f64 / k_count as f64;
        let mut accepted = None;
        for retry in 0..=MAX_SCREEN_RETRIES {
            let angle = base + retry as f64 * delta;
            let z = C64::new(angle.cos(), angle.sin());
            if theta_vartheta(theta_hat, z).norm() > tau_zero {
                accepted = Some(z);
                break;
            }
        }
        match accepted {
            Some(z) => points.push(z),
            None => {
                return Err(SysIdError::DegenerateEstimate(format!(
                    "no valid frequency near index {k}: the Markov estimate is \
                     (numerically) zero along the probe directions"
                )))
            }
        }
    }
    Ok(FrequencyGrid { points })
}

/// The stacked complex system `Gamma rho = kappa` whose solution holds the
/// characteristic coefficients and the entries of `C`.
#[derive(Debug, Clone)]
pub struct RecoverySystem {
    gamma: DMatrix<C64>,
    kappa: DVector<C64>,
    dims: SystemDims,
    truncation: usize,
    d_hat: DMatrix<f64>,
}

impl RecoverySystem {
    pub fn gamma(&self) -> &DMatrix<C64> {
        &self.gamma
    }

    pub fn kappa(&self) -> &DVector<C64> {
        &self.kappa
    }

    pub fn dims(&self) -> SystemDims {
        self.dims
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// Smallest singular value of `Gamma` (conditioning diagnostic).
    pub fn min_singular_value(&self) -> f64 {
        let svd = self.gamma.clone().svd(false, false);
        svd.singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-entry block `(R_ij, r_ij)` for 0-based input index `i` and output
/// index `j`: one row per frequency, columns `[-e_k z^{n-1}, ..., -e_k,
/// 1, z, ..., z^{n-1}]` with `e_k = [(Theta vartheta_k)']_{ij}`, right-hand
/// side `e_k z^n`.
pub fn entry_block(
    theta_hat: &MarkovMatrix,
    dims: SystemDims,
    grid: &FrequencyGrid,
    i: usize,
    j: usize,
) -> (DMatrix<C64>, DVector<C64>) {
    let n = dims.n;
    let k_count = grid.len();
    let mut r_block = DMatrix::zeros(k_count, 2 * n);
    let mut rhs = DVector::zeros(k_count);
    for (k, &z) in grid.points().iter().enumerate() {
        let w = theta_vartheta(theta_hat, z);
        let e = w[(j, i)]; // transpose: [(.)']_{ij} = (.)_{ji}
        fill_entry_row(&mut r_block, &mut rhs, k, z, e, n);
    }
    (r_block, rhs)
}

fn fill_entry_row(
    r_block: &mut DMatrix<C64>,
    rhs: &mut DVector<C64>,
    k: usize,
    z: C64,
    e: C64,
    n: usize,
) {
    // columns 0..n carry -e z^{n-v} for v = 1..n (descending powers)
    let mut pw = C64::new(1.0, 0.0);
    for v in (0..n).rev() {
        // pw = z^{n-1-v} ascending as v descends
        r_block[(k, v)] = -e * pw;
        pw *= z;
    }
    // pw is now z^n
    rhs[k] = e * pw;
    // columns n..2n carry 1, z, ..., z^{n-1}
    let mut pc = C64::new(1.0, 0.0);
    for v in 0..n {
        r_block[(k, n + v)] = pc;
        pc *= z;
    }
}

/// Stacks the per-entry blocks into the standard-form system.
///
/// Row block for (i, j) starts at `K (i p + j)`; the coefficient columns go
/// to `0..n` and the `C`-entry columns to `n + j n m + i + v m`, which is
/// the row-major position of `C[j][i + v m]` in the unknown vector.
pub fn build_recovery_system(
    theta_hat: &MarkovMatrix,
    dims: SystemDims,
    grid: &FrequencyGrid,
) -> Result<RecoverySystem> {
    let truncation = theta_hat.truncation();
    if truncation < dims.n + 1 {
        return Err(SysIdError::Precondition(format!(
            "rank condition requires T >= n + 1, got T = {truncation}, n = {}",
            dims.n
        )));
    }
    if theta_hat.output_dim() != dims.p || theta_hat.input_dim() != dims.m {
        return Err(SysIdError::Dimension(
            "Markov estimate shape does not match dims".into(),
        ));
    }
    let (n, m, p) = (dims.n, dims.m, dims.p);
    let k_count = grid.len();
    if k_count != dims.frequency_count() {
        return Err(SysIdError::Dimension(format!(
            "grid has {k_count} points, expected {}",
            dims.frequency_count()
        )));
    }
    let n_unknowns = dims.unknown_count();
    let mut gamma = DMatrix::zeros(m * p * k_count, n_unknowns);
    let mut kappa = DVector::zeros(m * p * k_count);
    // one transfer evaluation per frequency, shared across all (i, j)
    let tv: Vec<DMatrix<C64>> = grid
        .points()
        .iter()
        .map(|&z| theta_vartheta(theta_hat, z))
        .collect();
    let mut r_block = DMatrix::zeros(k_count, 2 * n);
    let mut rhs = DVector::zeros(k_count);
    for i in 0..m {
        for j in 0..p {
            for (k, &z) in grid.points().iter().enumerate() {
                fill_entry_row(&mut r_block, &mut rhs, k, z, tv[k][(j, i)], n);
            }
            let row0 = k_count * (i * p + j);
            gamma
                .view_mut((row0, 0), (k_count, n))
                .copy_from(&r_block.view((0, 0), (k_count, n)));
            for v in 0..n {
                let col = n + j * n * m + i + v * m;
                gamma
                    .view_mut((row0, col), (k_count, 1))
                    .copy_from(&r_block.view((0, n + v), (k_count, 1)));
            }
            kappa.rows_mut(row0, k_count).copy_from(&rhs);
        }
    }
    Ok(RecoverySystem {
        gamma,
        kappa,
        dims,
        truncation,
        d_hat: theta_hat.block(0),
    })
}

/// Recovered parameters plus the diagnostics of the complex solve.
#[derive(Debug, Clone)]
pub struct RecoveredParams {
    pub char_coeffs: DVector<f64>,
    pub c_matrix: DMatrix<f64>,
    pub d_matrix: DMatrix<f64>,
    /// Largest imaginary magnitude discarded when taking real parts.
    pub imag_residual: f64,
    /// `||Gamma rho_hat - kappa||_2` of the complex least-squares solution.
    pub ls_residual: f64,
    pub imag_warning: bool,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    a: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
    imag_residual: f64,
    ls_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    aligned: Option<bool>,
}

impl RecoveredParams {
    /// Per-matrix Frobenius errors `(||a_hat - a||_2, ||C_hat - C||_F,
    /// ||D_hat - D||_F)` against a ground-truth system.
    pub fn error_vs(&self, sys: &BrunovskySystem) -> (f64, f64, f64) {
        let a_err = self
            .char_coeffs
            .iter()
            .zip(sys.char_coeffs())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let c_err = (&self.c_matrix - sys.c_matrix()).norm();
        let d_err = (&self.d_matrix - sys.d_matrix()).norm();
        (a_err, c_err, d_err)
    }

    /// Sum of the three component errors; the scalar trace metric.
    pub fn total_error_vs(&self, sys: &BrunovskySystem) -> f64 {
        let (a, c, d) = self.error_vs(sys);
        a + c + d
    }

    pub fn to_json(&self) -> String {
        let j = ParamsJson {
            a: self.char_coeffs.iter().copied().collect(),
            c: row_major(&self.c_matrix),
            d: row_major(&self.d_matrix),
            imag_residual: self.imag_residual,
            ls_residual: self.ls_residual,
            aligned: None,
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(mat.nrows() * mat.ncols());
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            out.push(mat[(r, c)]);
        }
    }
    out
}

/// Complex least squares on the stacked system via SVD, then realification.
///
/// Singular values below the standard pseudo-inverse tolerance
/// `max(rows, cols) * eps * sigma_max` are truncated, giving the
/// minimum-norm solution. High-order systems whose weakest modes sit below
/// working precision (small-modulus roots make a channel numerically
/// lower-order) thus still solve: on consistent data the weak directions
/// resolve to partial precision, on noisy data their amplified content
/// shows up honestly in the parameter error, and `min_singular_value`
/// exposes the conditioning either way. A rank error fires only for a
/// numerically zero matrix.
pub fn solve_recovery(rs: &RecoverySystem) -> Result<RecoveredParams> {
    let svd = rs.gamma.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(SysIdError::RankDeficient(
            "gamma is numerically zero".into(),
        ));
    }
    let (rows, cols) = rs.gamma.shape();
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    let rho = svd
        .solve(&rs.kappa, tol)
        .map_err(|e| SysIdError::RankDeficient(e.to_string()))?;
    let ls_residual = (&rs.gamma * &rho - &rs.kappa).norm();
    let imag_residual = rho.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let (n, m, p) = (rs.dims.n, rs.dims.m, rs.dims.p);
    let char_coeffs = DVector::from_fn(n, |v, _| rho[v].re);
    let c_matrix = DMatrix::from_fn(p, n * m, |j, col| rho[n + j * n * m + col].re);
    Ok(RecoveredParams {
        char_coeffs,
        c_matrix,
        d_matrix: rs.d_hat.clone(),
        imag_residual,
        ls_residual,
        imag_warning: imag_residual > IMAG_WARN_THRESHOLD,
    })
}

/// Grid, stacked system and solve, in one call.
pub fn recover_from_markov(theta_hat: &MarkovMatrix, dims: SystemDims) -> Result<RecoveredParams> {
    let grid = make_frequency_grid(dims, theta_hat)?;
    let rs = build_recovery_system(theta_hat, dims, &grid)?;
    solve_recovery(&rs)
}

/// One emitted checkpoint of the combined runners.
#[derive(Debug, Clone)]
pub struct CombinedCheckpoint {
    pub iteration: u64,
    /// Snapshot of the Markov iterate at this checkpoint.
    pub theta: MarkovMatrix,
    pub params: RecoveredParams,
}

fn is_checkpoint(iter: u64, every: u64, last: u64) -> bool {
    iter == last || (every > 0 && iter % every == 0)
}

/// Attempts a recovery solve from the current iterate; screen failures are
/// reported upward so the caller can decide to skip the checkpoint.
fn checkpoint_solve(
    theta: &MarkovMatrix,
    dims: SystemDims,
    iteration: u64,
) -> Result<CombinedCheckpoint> {
    let params = recover_from_markov(theta, dims)?;
    Ok(CombinedCheckpoint {
        iteration,
        theta: theta.clone(),
        params,
    })
}

/// Online SGD with the linear-system solve at checkpoint cadence.
///
/// Solving is read-only on the iterate, so the cadence changes which
/// checkpoints are emitted but never the SGD trajectory itself. Checkpoints
/// where the frequency screen rejects the iterate (early, near-zero
/// estimates) are skipped; if every checkpoint fails the last error is
/// returned.
pub fn run_online_combined(
    stream: impl Iterator<Item = (DVector<f64>, DVector<f64>)>,
    dims: SystemDims,
    truncation: usize,
    eta: f64,
    n_pairs: u64,
    checkpoint_every: u64,
) -> Result<Vec<CombinedCheckpoint>> {
    if truncation < dims.n + 1 {
        return Err(SysIdError::Precondition(format!(
            "rank condition requires T >= n + 1, got T = {truncation}"
        )));
    }
    let mut online = OnlineSgd::new(dims.p, dims.m, truncation, eta)?;
    let mut out = Vec::new();
    let mut last_err = None;
    for (u, y) in stream.take(n_pairs as usize) {
        online.feed(u, &y)?;
        let t = online.pairs_seen();
        if t >= truncation as u64 && is_checkpoint(t, checkpoint_every, n_pairs) {
            match checkpoint_solve(online.theta_hat(), dims, t) {
                Ok(cp) => out.push(cp),
                Err(e) => last_err = Some(e),
            }
        }
    }
    if out.is_empty() {
        return Err(last_err
            .unwrap_or_else(|| SysIdError::Precondition("stream produced no checkpoints".into())));
    }
    Ok(out)
}

/// Offline SGD with the linear-system solve at checkpoint cadence.
#[allow(clippy::too_many_arguments)]
pub fn run_offline_combined(
    trajectory: &Trajectory,
    dims: SystemDims,
    truncation: usize,
    eta: f64,
    n_iters: u64,
    seed: u64,
    checkpoint_every: u64,
) -> Result<Vec<CombinedCheckpoint>> {
    if truncation < dims.n + 1 {
        return Err(SysIdError::Precondition(format!(
            "rank condition requires T >= n + 1, got T = {truncation}"
        )));
    }
    let mut state = offline_sgd_prepare(trajectory, truncation, eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut last_err = None;
    let attempt = |iter: u64,
                   theta: &MarkovMatrix,
                   out: &mut Vec<CombinedCheckpoint>,
                   last_err: &mut Option<SysIdError>| {
        match checkpoint_solve(theta, dims, iter) {
            Ok(cp) => out.push(cp),
            Err(e) => *last_err = Some(e),
        }
    };
    if n_iters == 0 {
        attempt(0, state.theta_hat(), &mut out, &mut last_err);
    }
    for iter in 1..=n_iters {
        offline_sgd_iteration(&mut state, trajectory, truncation, &mut rng)?;
        if is_checkpoint(iter, checkpoint_every, n_iters) {
            attempt(iter, state.theta_hat(), &mut out, &mut last_err);
        }
    }
    if out.is_empty() {
        return Err(
            last_err.unwrap_or_else(|| SysIdError::Precondition("no checkpoints emitted".into()))
        );
    }
    Ok(out)
}

/// Online pseudo-inverse method: running normal equations (O((mT)^2) memory),
/// a full least-squares solve at each checkpoint once `t >= 2T`, then the
/// recovery solve on that estimate.
pub fn run_online_pseudoinverse(
    stream: impl Iterator<Item = (DVector<f64>, DVector<f64>)>,
    dims: SystemDims,
    truncation: usize,
    n_pairs: u64,
    checkpoint_every: u64,
) -> Result<Vec<CombinedCheckpoint>> {
    if truncation < dims.n + 1 {
        return Err(SysIdError::Precondition(format!(
            "rank condition requires T >= n + 1, got T = {truncation}"
        )));
    }
    let mut acc = NormalEquations::new(dims.p, dims.m, truncation);
    let mut window: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    let mut last_err = None;
    let mut t: u64 = 0;
    for (u, y) in stream.take(n_pairs as usize) {
        t += 1;
        window.push(u);
        if window.len() > truncation {
            window.remove(0);
        }
        if t >= truncation as u64 {
            // stack the bounded window, newest input first
            let m = dims.m;
            let mut x = DVector::zeros(m * truncation);
            for (lag, uu) in window.iter().rev().enumerate() {
                x.rows_mut(lag * m, m).copy_from(uu);
            }
            let xw = RegressorWindow::from_stacked(x, t as usize);
            acc.absorb(&xw, &y);
        }
        if t >= 2 * truncation as u64 && is_checkpoint(t, checkpoint_every, n_pairs) {
            match acc.solve() {
                Ok(theta) => match checkpoint_solve(&theta, dims, t) {
                    Ok(cp) => out.push(cp),
                    Err(e) => last_err = Some(e),
                },
                Err(e) => last_err = Some(e),
            }
        }
    }
    if out.is_empty() {
        return Err(last_err.unwrap_or_else(|| {
            SysIdError::Precondition("no checkpoints emitted (stream shorter than 2T?)".into())
        }));
    }
    Ok(out)
}
