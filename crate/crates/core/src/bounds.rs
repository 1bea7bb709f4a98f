//! Closed-form error bounds for overlaying on empirical traces.
//!
//! Every formula here is a function of problem parameters only (dimensions,
//! truncation, batch size, spectral radius, eigenbasis conditioning, input
//! and noise variances, step size); nothing is fitted. The `n` appearing in
//! the formulas is interpreted as the assembled state dimension `n * m` by
//! default, since the derivations work with the state-space matrices; the
//! convention is recorded on the inputs and can be switched.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::lti::{BrunovskySystem, SystemDims, C64};

/// Convergence cap on the SGD step size: `1 / (m T max(sigma^2))`.
pub fn step_size_cap(m: usize, truncation: usize, sigma_max_sq: f64) -> f64 {
    1.0 / (m as f64 * truncation as f64 * sigma_max_sq)
}

/// Fastest-rate step size: `1 / (2 m T max(sigma^2))`.
pub fn step_size_star(m: usize, truncation: usize, sigma_max_sq: f64) -> f64 {
    0.5 * step_size_cap(m, truncation, sigma_max_sq)
}

/// Growth factor linking Markov error to parameter error:
/// `n m (n + n m p) (T - 1)` with `n` the block order.
pub fn linkage_factor(dims: SystemDims, truncation: usize) -> f64 {
    (dims.state_dim() * dims.unknown_count() * (truncation - 1)) as f64
}

/// Which state dimension stands in for `n` in the bound formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimConvention {
    /// Assembled hidden-state dimension `n * m` (default).
    StateDim,
    /// Raw block order `n`.
    BlockOrder,
}

/// Everything the bound formulas consume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundInputs {
    pub dims: SystemDims,
    pub convention: DimConvention,
    pub truncation: usize,
    pub batch_size: usize,
    /// Spectral radius of `A`.
    pub rho: f64,
    /// Eigenbasis conditioning `l = ||V^{-1}||_F^2` with unit-norm
    /// eigenvector columns.
    pub ell: f64,
    pub frob_b: f64,
    pub frob_c: f64,
    pub h0_norm: f64,
    pub sigma_max_sq: f64,
    pub sigma_min_sq: f64,
    pub sigma_zeta_max_sq: f64,
    pub eta: f64,
    /// `||Theta_hat_0 - Theta_hat_T||_F`, the initial optimality gap.
    pub omega0_norm: f64,
}

/// Evaluated bound formulas for one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub truncation_bound: f64,
    /// Transfer tail cap at `|z| = 1`.
    pub transfer_tail_bound: f64,
    pub chi_n_sq: f64,
    pub contraction_factor: f64,
    pub delta_n: f64,
    pub eta_cap: f64,
    pub eta_star: f64,
}

impl BoundInputs {
    /// Extracts all bound parameters from a ground-truth system. `h0` is
    /// taken as zero and `omega0_norm` as zero; override with the builders.
    pub fn from_system(
        sys: &BrunovskySystem,
        truncation: usize,
        batch_size: usize,
        input_variances: &[f64],
        meas_noise_variances: &[f64],
        eta: f64,
    ) -> Result<Self> {
        let dims = sys.dims();
        if input_variances.len() != dims.m || meas_noise_variances.len() != dims.p {
            return Err(SysIdError::Dimension(
                "variance vectors must match dims".into(),
            ));
        }
        let sigma_min_sq = input_variances
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(sigma_min_sq > 0.0) {
            return Err(SysIdError::InvalidParameter(
                "min input variance must be positive".into(),
            ));
        }
        let sigma_max_sq = input_variances.iter().copied().fold(0.0, f64::max);
        let sigma_zeta_max_sq = meas_noise_variances.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            dims,
            convention: DimConvention::StateDim,
            truncation,
            batch_size,
            rho: sys.spectral_radius(),
            ell: ell_from_roots(&sys.roots(), dims.m),
            // Brunovsky B is [0; ...; 0; I_m].
            frob_b: (dims.m as f64).sqrt(),
            frob_c: sys.c_matrix().norm(),
            h0_norm: 0.0,
            sigma_max_sq,
            sigma_min_sq,
            sigma_zeta_max_sq,
            eta,
            omega0_norm: 0.0,
        })
    }

    pub fn with_h0_norm(mut self, h0_norm: f64) -> Self {
        self.h0_norm = h0_norm;
        self
    }

    pub fn with_omega0_norm(mut self, omega0_norm: f64) -> Self {
        self.omega0_norm = omega0_norm;
        self
    }

    pub fn with_convention(mut self, convention: DimConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_truncation(mut self, truncation: usize) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    /// The `n` fed into the formulas, per the recorded convention.
    pub fn formula_dim(&self) -> f64 {
        match self.convention {
            DimConvention::StateDim => self.dims.state_dim() as f64,
            DimConvention::BlockOrder => self.dims.n as f64,
        }
    }

    /// Near-defective eigenbases make `ell` explode; flag rather than fail.
    pub fn conditioning_warning(&self) -> bool {
        !self.ell.is_finite() || self.ell > 1e8
    }

    /// Bracketed hidden-state energy factor shared by the truncation bounds.
    fn gamma_bracket(&self) -> f64 {
        let n = self.formula_dim();
        let m = self.dims.m as f64;
        let b2 = self.frob_b * self.frob_b;
        let rho2 = self.rho * self.rho;
        n * n * self.ell * rho2 * self.h0_norm * self.h0_norm
            + n * n * self.ell * m * self.sigma_max_sq * rho2 * b2 / (1.0 - rho2)
            + m * self.sigma_max_sq * b2
    }

    /// Mean-squared cap on the truncated hidden-state term
    /// `||C A^(T-1) h_{t-T+1}||^2`.
    pub fn truncation_bound(&self) -> Result<f64> {
        if !(self.rho < 1.0) {
            return Err(SysIdError::InvalidParameter(format!(
                "spectral radius {} must be < 1",
                self.rho
            )));
        }
        let n = self.formula_dim();
        let c2 = self.frob_c * self.frob_c;
        Ok(n * n
            * self.ell
            * c2
            * self.rho.powi(2 * (self.truncation as i32 - 1))
            * self.gamma_bracket())
    }

    /// Squared Frobenius cap on the transfer-function tail `E_{z,T}` at
    /// modulus `|z| = z_modulus`.
    pub fn transfer_tail_bound(&self, z_modulus: f64) -> Result<f64> {
        if !(self.rho < z_modulus) {
            return Err(SysIdError::InvalidParameter(format!(
                "need rho < |z| (stability region), got rho = {}, |z| = {z_modulus}",
                self.rho
            )));
        }
        let n = self.formula_dim();
        let c2 = self.frob_c * self.frob_c;
        let b2 = self.frob_b * self.frob_b;
        let decay = self.rho.powi(2 * (self.truncation as i32 - 1));
        Ok(n * n * self.ell * c2 * b2 * decay
            / (1.0 - self.rho * self.rho / (z_modulus * z_modulus)))
    }

    /// Squared distance cap between the batch least-squares minimizer and
    /// the truncated ground truth; decays as 1/(N - T + 1).
    pub fn chi_n_sq(&self) -> Result<f64> {
        let t = self.truncation as f64;
        if self.batch_size < 2 * self.truncation {
            return Err(SysIdError::Precondition(format!(
                "batch size {} < 2T = {}",
                self.batch_size,
                2 * self.truncation
            )));
        }
        let n = self.formula_dim();
        let m = self.dims.m as f64;
        let p = self.dims.p as f64;
        let c2 = self.frob_c * self.frob_c;
        let b2 = self.frob_b * self.frob_b;
        let samples = (self.batch_size - self.truncation + 1) as f64;
        let denom = samples * self.sigma_min_sq * self.sigma_min_sq;
        let rho2t_m1 = self.rho.powi(2 * (self.truncation as i32 - 1));
        let rho2t = self.rho.powi(2 * self.truncation as i32);
        let iota =
            self.h0_norm * self.h0_norm + m * self.sigma_max_sq * b2 / (1.0 - self.rho * self.rho);
        let term_trunc =
            n * n * self.ell * c2 * rho2t_m1 * m.powi(3) * t * t * self.sigma_max_sq.powi(3) * b2;
        let term_noise = p * m * m * t * t * self.sigma_zeta_max_sq * self.sigma_max_sq;
        let term_state = n.powi(4)
            * self.ell
            * self.ell
            * m
            * m
            * t
            * t
            * rho2t
            * c2
            * self.sigma_max_sq
            * self.sigma_max_sq
            * iota;
        Ok((term_trunc + term_noise + term_state) / denom)
    }

    pub fn chi_n(&self) -> Result<f64> {
        Ok(self.chi_n_sq()?.sqrt())
    }

    /// Per-iteration contraction factor of the SGD optimality gap:
    /// `1 - 2 eta m T min(sigma^2) + 2 eta^2 m^2 T^2 min(sigma^2) max(sigma^2)`.
    pub fn contraction_factor(&self) -> f64 {
        let mt = self.dims.m as f64 * self.truncation as f64;
        1.0 - 2.0 * self.eta * mt * self.sigma_min_sq
            + 2.0 * self.eta * self.eta * mt * mt * self.sigma_min_sq * self.sigma_max_sq
    }

    /// Additive SGD bound offset (the bracketed constant of the offline
    /// bound; evaluated verbatim, with the online variant obtained by
    /// substituting the stream length for N).
    pub fn delta_n(&self) -> Result<f64> {
        let chi2 = self.chi_n_sq()?;
        let mt = self.dims.m as f64 * self.truncation as f64;
        let p = self.dims.p as f64;
        let n = self.formula_dim();
        let eta = self.eta;
        let w0sq = self.omega0_norm * self.omega0_norm;
        let c = self.contraction_factor();
        let lip = mt * self.sigma_max_sq;
        let num = 2.0 * eta * eta * lip * lip * chi2
            + (eta * lip + eta * eta * lip * lip) * (chi2 + w0sq)
            + 2.0
                * n
                * n
                * eta
                * eta
                * mt
                * self.sigma_max_sq
                * self.ell
                * self.rho.powi(2 * (self.truncation as i32 - 1))
                * self.gamma_bracket()
                * self.frob_c
                * self.frob_c
            + 2.0 * eta * eta * p * mt * self.sigma_max_sq * self.sigma_zeta_max_sq;
        Ok(num / c)
    }

    pub fn eta_cap(&self) -> f64 {
        step_size_cap(self.dims.m, self.truncation, self.sigma_max_sq)
    }

    pub fn eta_star(&self) -> f64 {
        step_size_star(self.dims.m, self.truncation, self.sigma_max_sq)
    }

    /// Full SGD bound curve `||w0||^2 c^tau + Delta_N + chi_N^2` at each
    /// requested iteration count.
    pub fn sgd_bound_curve(&self, iterations: &[u64]) -> Result<Vec<f64>> {
        if !(self.eta > 0.0 && self.eta <= self.eta_cap()) {
            return Err(SysIdError::InvalidParameter(format!(
                "step size {} outside (0, {}]",
                self.eta,
                self.eta_cap()
            )));
        }
        let c = self.contraction_factor();
        let floor = self.delta_n()? + self.chi_n_sq()?;
        let w0sq = self.omega0_norm * self.omega0_norm;
        Ok(iterations
            .iter()
            .map(|&tau| w0sq * c.powf(tau as f64) + floor)
            .collect())
    }

    pub fn report(&self) -> Result<BoundReport> {
        Ok(BoundReport {
            truncation_bound: self.truncation_bound()?,
            transfer_tail_bound: self.transfer_tail_bound(1.0)?,
            chi_n_sq: self.chi_n_sq()?,
            contraction_factor: self.contraction_factor(),
            delta_n: self.delta_n()?,
            eta_cap: self.eta_cap(),
            eta_star: self.eta_star(),
        })
    }

    /// Smallest truncation in `[max(2, n+1), t_max]` whose transfer tail
    /// bound at `|z| = 1` falls below `target`.
    pub fn smallest_truncation_for_tail(&self, target: f64, t_max: usize) -> Option<usize> {
        let start = 2.max(self.dims.n + 1);
        (start..=t_max).find(|&t| {
            self.clone()
                .with_truncation(t)
                .transfer_tail_bound(1.0)
                .map(|b| b < target)
                .unwrap_or(false)
        })
    }
}

/// Eigenbasis conditioning of the assembled Brunovsky `A`.
///
/// The assembled matrix is the Kronecker lift of the scalar companion
/// matrix, so its (column-normalized) eigenvector matrix is the normalized
/// root Vandermonde tensored with the identity, and
/// `||V^{-1}||_F^2 = m ||V_c^{-1}||_F^2`. Returns infinity for a defective
/// (repeated-root) basis.
pub fn ell_from_roots(roots: &[C64], m: usize) -> f64 {
    let n = roots.len();
    let mut v = DMatrix::zeros(n, n);
    for (j, root) in roots.iter().enumerate() {
        let mut pw = C64::new(1.0, 0.0);
        for i in 0..n {
            v[(i, j)] = pw;
            pw *= root;
        }
        let norm = v.column(j).norm();
        if norm > 0.0 {
            for i in 0..n {
                v[(i, j)] /= C64::new(norm, 0.0);
            }
        }
    }
    match v.lu().try_inverse() {
        Some(inv) => m as f64 * inv.norm().powi(2),
        None => f64::INFINITY,
    }
}
