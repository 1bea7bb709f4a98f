//! Experiment configuration (JSON).

use serde::{Deserialize, Serialize};
use sysid_core::bounds::{step_size_cap, step_size_star};
use sysid_core::lti::SystemDims;
use sysid_core::{Result, SysIdError};

/// Which pipeline an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    OfflineSgd,
    OnlineSgd,
    OnlinePinv,
    OfflineCombined,
    OnlineCombined,
    HoKalman,
}

impl Algorithm {
    /// Whether the trace carries recovered-parameter error columns.
    pub fn recovers_parameters(&self) -> bool {
        !matches!(self, Algorithm::OfflineSgd | Algorithm::OnlineSgd)
    }

    /// Whether the pipeline is SGD-driven (the contraction bound curve applies).
    pub fn is_sgd(&self) -> bool {
        !matches!(self, Algorithm::OnlinePinv | Algorithm::HoKalman)
    }
}

/// Step size: a literal value, or "auto" for the fastest-rate prescription.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub rho_max: f64,
    /// Truncation length T.
    pub t: usize,
    /// Batch size (offline) or stream length (online).
    pub n_samples: usize,
    pub eta: EtaSpec,
    pub noise_std: f64,
    pub input_std: f64,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    /// Seed for the ground-truth system draw (independent of data seeds).
    #[serde(default = "default_system_seed")]
    pub system_seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Offline SGD iteration count; defaults to `n_samples`.
    #[serde(default)]
    pub n_iters: Option<u64>,
    /// Output directory; CLI flag overrides.
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_system_seed() -> u64 {
    0
}

fn default_checkpoint_every() -> u64 {
    100
}

impl ExperimentConfig {
    pub fn dims(&self) -> Result<SystemDims> {
        SystemDims::new(self.n, self.m, self.p)
    }

    pub fn input_variances(&self) -> Vec<f64> {
        vec![self.input_std * self.input_std; self.m]
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        vec![self.noise_std * self.noise_std; self.p]
    }

    /// Resolved step size plus a warning flag when it exceeds the cap
    /// (allowed: divergence studies are legitimate experiments).
    pub fn resolve_eta(&self) -> (f64, bool) {
        let sigma_max_sq = self.input_std * self.input_std;
        match self.eta {
            EtaSpec::Auto(_) => (step_size_star(self.m, self.t, sigma_max_sq), false),
            EtaSpec::Value(v) => (v, v > step_size_cap(self.m, self.t, sigma_max_sq)),
        }
    }

    pub fn n_iters(&self) -> u64 {
        self.n_iters.unwrap_or(self.n_samples as u64)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.seeds.is_empty() {
            return Err(SysIdError::InvalidParameter(
                "config needs at least one seed".into(),
            ));
        }
        if !(cfg.input_std > 0.0) {
            return Err(SysIdError::InvalidParameter(
                "input_std must be positive".into(),
            ));
        }
        if cfg.noise_std < 0.0 {
            return Err(SysIdError::InvalidParameter(
                "noise_std must be nonnegative".into(),
            ));
        }
        cfg.dims()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
