//! Ho-Kalman SVD baseline: state-space realization from a block Hankel
//! matrix of Markov parameters.
//!
//! With `k = (T-1)/2` block rows, `H[i][j] = G_{i+j+1}` uses Markov blocks
//! `1..=2k-1` (`D` excluded) and the shifted `H+[i][j] = G_{i+j+2}` uses
//! blocks `2..=2k`. The rank-(nm) SVD of `H` splits into observability and
//! controllability factors; the realization is similar to, not equal to,
//! the generating system unless an alignment transform is supplied.
//!
//! Note a Brunovsky `A` carries every eigenvalue with geometric multiplicity
//! `m`, so systems with `p < m` outputs are structurally unobservable and
//! their Hankel rank falls short of `n m`; realization then fails with a
//! rank error.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::lti::{assemble_state_matrices, BrunovskySystem, MarkovMatrix, SystemDims};

/// Desk-scale default truncation: enough Hankel rank at small sizes.
pub fn default_truncation(dims: SystemDims) -> usize {
    let nm = dims.state_dim();
    let t = (4 * nm).max(2 * nm + 2);
    t + t % 2
}

fn hankel_block_rows(truncation: usize) -> usize {
    (truncation.saturating_sub(1)) / 2
}

/// Block-Hankel matrix `H[i][j] = G_{i+j+1}` of `k x k` blocks.
pub fn build_hankel(theta: &MarkovMatrix, dims: SystemDims) -> Result<DMatrix<f64>> {
    let k = hankel_block_rows(theta.truncation());
    if k < 1 {
        return Err(SysIdError::Precondition(format!(
            "truncation {} too small for a Hankel matrix (need T >= 3)",
            theta.truncation()
        )));
    }
    hankel_with_offset(theta, dims, k, 1)
}

/// Shifted Hankel `H+[i][j] = G_{i+j+2}`, the same shape as `H`.
pub fn build_hankel_shifted(theta: &MarkovMatrix, dims: SystemDims) -> Result<DMatrix<f64>> {
    let k = hankel_block_rows(theta.truncation());
    if k < 1 {
        return Err(SysIdError::Precondition(
            "truncation too small for a shifted Hankel matrix".into(),
        ));
    }
    hankel_with_offset(theta, dims, k, 2)
}

fn hankel_with_offset(
    theta: &MarkovMatrix,
    dims: SystemDims,
    k: usize,
    offset: usize,
) -> Result<DMatrix<f64>> {
    let (p, m) = (dims.p, dims.m);
    let mut h = DMatrix::zeros(k * p, k * m);
    for i in 0..k {
        for j in 0..k {
            let blk = theta.block(i + j + offset);
            h.view_mut((i * p, j * m), (p, m)).copy_from(&blk);
        }
    }
    Ok(h)
}

/// Result of the Ho-Kalman realization.
#[derive(Debug, Clone)]
pub struct HankelDecomposition {
    pub hankel: DMatrix<f64>,
    /// Observability factor `O = U Sigma^(1/2)` (after alignment, if any).
    pub observability: DMatrix<f64>,
    /// Controllability factor `Q = Sigma^(1/2) V'` (after alignment, if any).
    pub controllability: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    /// Similarity transform applied to the raw factors; `None` = identity.
    pub alignment: Option<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BaselineJson {
    a: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
    imag_residual: f64,
    ls_residual: f64,
    aligned: bool,
}

impl HankelDecomposition {
    /// `||A_hat - A||_F` against the assembled ground-truth state matrix.
    pub fn state_matrix_error(&self, sys: &BrunovskySystem) -> f64 {
        let (a, _) = assemble_state_matrices(sys);
        (&self.a_hat - a).norm()
    }

    /// First `t` Markov blocks of the realized system.
    pub fn markov_of(&self, truncation: usize) -> Result<MarkovMatrix> {
        let p = self.c_hat.nrows();
        let m = self.b_hat.ncols();
        let mut blocks = DMatrix::zeros(p, m * truncation);
        blocks.view_mut((0, 0), (p, m)).copy_from(&self.d_hat);
        let mut power = self.b_hat.clone();
        for k in 1..truncation {
            let blk = &self.c_hat * &power;
            blocks.view_mut((0, k * m), (p, m)).copy_from(&blk);
            power = &self.a_hat * power;
        }
        MarkovMatrix::new(blocks, truncation)
    }

    /// Reads characteristic coefficients off the bottom block row of
    /// `A_hat` (meaningful after alignment, when `A_hat` is near Brunovsky
    /// form: the block at column `n - v` averages to `-a_v I`).
    pub fn char_coeffs_readoff(&self, dims: SystemDims) -> Vec<f64> {
        let (n, m) = (dims.n, dims.m);
        let row0 = (n - 1) * m;
        (1..=n)
            .map(|v| {
                let col0 = (n - v) * m;
                let mut acc = 0.0;
                for k in 0..m {
                    acc += self.a_hat[(row0 + k, col0 + k)];
                }
                -acc / m as f64
            })
            .collect()
    }

    pub fn to_json(&self, dims: SystemDims) -> String {
        let j = BaselineJson {
            a: self.char_coeffs_readoff(dims),
            c: row_major(&self.c_hat),
            d: row_major(&self.d_hat),
            imag_residual: 0.0,
            ls_residual: 0.0,
            aligned: self.alignment.is_some(),
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

/// Ground-truth observability matrix `[C; CA; ...; C A^(k-1)]`.
fn true_observability(sys: &BrunovskySystem, k: usize) -> DMatrix<f64> {
    let (a, _) = assemble_state_matrices(sys);
    let dims = sys.dims();
    let nm = dims.state_dim();
    let mut o = DMatrix::zeros(k * dims.p, nm);
    let mut ca = sys.c_matrix().clone();
    for blk in 0..k {
        o.view_mut((blk * dims.p, 0), (dims.p, nm)).copy_from(&ca);
        ca = &ca * &a;
    }
    o
}

/// Rank-(nm) Ho-Kalman realization, optionally aligned to a ground-truth
/// system by least squares between observability matrices.
pub fn ho_kalman(
    theta: &MarkovMatrix,
    dims: SystemDims,
    align_to: Option<&BrunovskySystem>,
) -> Result<HankelDecomposition> {
    let nm = dims.state_dim();
    let k = hankel_block_rows(theta.truncation());
    if k < 1 || k * dims.p < nm || k * dims.m < nm {
        return Err(SysIdError::Precondition(format!(
            "truncation {} too small: need (T-1)/2 blocks to span rank {nm}",
            theta.truncation()
        )));
    }
    let h = build_hankel(theta, dims)?;
    let h_plus = build_hankel_shifted(theta, dims)?;
    let svd = h.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    if sigma[nm - 1] <= 1e-12 * sigma[0] {
        return Err(SysIdError::RankDeficient(format!(
            "Hankel rank below {nm}: sigma_{nm} / sigma_1 = {:.3e} \
             (truncation too small or wrong order)",
            sigma[nm - 1] / sigma[0]
        )));
    }
    let mut observability = DMatrix::zeros(k * dims.p, nm);
    let mut controllability = DMatrix::zeros(nm, k * dims.m);
    for r in 0..nm {
        let s = sigma[r].sqrt();
        observability.column_mut(r).copy_from(&(u.column(r) * s));
        controllability.row_mut(r).copy_from(&(v_t.row(r) * s));
    }
    let pinv_eps = 1e-12 * sigma[0].max(1.0);
    let o_pinv = observability
        .clone()
        .svd(true, true)
        .pseudo_inverse(pinv_eps)
        .map_err(|e| SysIdError::RankDeficient(e.to_string()))?;
    let q_pinv = controllability
        .clone()
        .svd(true, true)
        .pseudo_inverse(pinv_eps)
        .map_err(|e| SysIdError::RankDeficient(e.to_string()))?;
    let mut a_hat = &o_pinv * &h_plus * &q_pinv;
    let mut c_hat: DMatrix<f64> = observability.rows(0, dims.p).into();
    let mut b_hat: DMatrix<f64> = controllability.columns(0, dims.m).into();
    let mut alignment = None;

    if let Some(sys) = align_to {
        let o_true = true_observability(sys, k);
        let t = &o_pinv * o_true;
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| SysIdError::RankDeficient("alignment transform is singular".into()))?;
        a_hat = &t_inv * a_hat * &t;
        b_hat = &t_inv * b_hat;
        c_hat *= &t;
        observability *= &t;
        controllability = t_inv * controllability;
        alignment = Some(t);
    }

    Ok(HankelDecomposition {
        hankel: h,
        observability,
        controllability,
        a_hat,
        b_hat,
        c_hat,
        d_hat: theta.block(0),
        alignment,
    })
}
