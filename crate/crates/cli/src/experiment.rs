//! Experiment driver: per-seed pipelines, traces, summaries, comparisons.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sysid_core::baseline::ho_kalman;
use sysid_core::bounds::BoundInputs;
use sysid_core::estimation::{
    least_squares_markov, markov_error, offline_sgd_iteration, offline_sgd_prepare, OnlineSgd,
};
use sysid_core::lti::{
    assemble_state_matrices, companion_block_matrix, generate_system, true_markov,
    BrunovskySystem, MarkovMatrix, Trajectory, TrajectoryStream,
};
use sysid_core::recovery::{
    recover_from_markov, run_offline_combined, run_online_combined, run_online_pseudoinverse,
};
use sysid_core::{Result, SysIdError};

use crate::config::{Algorithm, ExperimentConfig};
use crate::fit::{fit_log_error, FitResult};
use crate::trace::{write_trace, TraceRow};

/// Decouples the offline SGD sampling stream from the data-generation seed.
const SAMPLING_SALT: u64 = 0x5eed_5a17;

fn with_seed_context(e: SysIdError, seed: u64) -> SysIdError {
    use SysIdError::*;
    let msg = |s: String| format!("seed {seed}: {s}");
    match e {
        Dimension(s) => Dimension(msg(s)),
        InvalidParameter(s) => InvalidParameter(msg(s)),
        Precondition(s) => Precondition(msg(s)),
        Singular(s) => Singular(msg(s)),
        RankDeficient(s) => RankDeficient(msg(s)),
        Divergence(s) => Divergence(msg(s)),
        DegenerateEstimate(s) => DegenerateEstimate(msg(s)),
        Io(s) => Io(msg(s)),
    }
}

/// Caps worker threads for per-seed parallelism.
pub fn thread_budget(n_tasks: usize) -> usize {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("SYSID_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(hw);
    cap.min(n_tasks).max(1)
}

/// Runs `f` over the seeds with bounded parallelism, preserving seed order.
pub fn for_each_seed<T: Send>(
    seeds: &[u64],
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let workers = thread_budget(seeds.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<T>>>> =
        seeds.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= seeds.len() {
                    break;
                }
                let out = f(seeds[idx]);
                *slots[idx].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_iter: u64,
    pub final_markov_err: f64,
    pub final_a_err: Option<f64>,
    pub final_c_err: Option<f64>,
    pub final_d_err: Option<f64>,
    pub final_param_err: Option<f64>,
    pub slope: Option<FitResult>,
    /// (cells where the SGD bound was violated, cells compared)
    pub bound_violations: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub eta_cap: f64,
    pub eta_star: f64,
    pub eta_warning: bool,
    pub rho: f64,
    pub per_seed: Vec<SeedSummary>,
    pub median_final_markov_err: f64,
    pub quartile_final_markov_err: (f64, f64),
    pub median_final_param_err: Option<f64>,
    pub quartile_final_param_err: Option<(f64, f64)>,
    pub median_slope: Option<f64>,
    pub bound_violation_cells: usize,
    pub bound_compared_cells: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

fn quantiles(values: impl Iterator<Item = f64>) -> Option<(f64, (f64, f64))> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some((
        percentile(&v, 0.5),
        (percentile(&v, 0.25), percentile(&v, 0.75)),
    ))
}

fn is_checkpoint(iter: u64, every: u64, last: u64) -> bool {
    iter == last || (every > 0 && iter % every == 0)
}

fn make_stream(
    cfg: &ExperimentConfig,
    sys: &BrunovskySystem,
    seed: u64,
) -> Result<TrajectoryStream> {
    let dims = sys.dims();
    TrajectoryStream::new(
        sys,
        &DVector::from_vec(cfg.input_variances()),
        &DVector::from_vec(cfg.noise_variances()),
        None,
        DVector::zeros(dims.state_dim()),
        seed,
    )
}

/// Batch data for the offline paths. Collects I/O pairs only — hidden
/// states at paper-scale batches would cost gigabytes and nothing here
/// reads them. Draws are identical to `lti::simulate` for the same seed.
fn make_trajectory(cfg: &ExperimentConfig, sys: &BrunovskySystem, seed: u64) -> Result<Trajectory> {
    let dims = sys.dims();
    let input_variances = DVector::from_vec(cfg.input_variances());
    let meas_noise_variances = DVector::from_vec(cfg.noise_variances());
    let initial_state = DVector::zeros(dims.state_dim());
    let stream = TrajectoryStream::new(
        sys,
        &input_variances,
        &meas_noise_variances,
        None,
        initial_state.clone(),
        seed,
    )?;
    let mut inputs = Vec::with_capacity(cfg.n_samples);
    let mut outputs = Vec::with_capacity(cfg.n_samples);
    for (u, y) in stream.take(cfg.n_samples) {
        inputs.push(u);
        outputs.push(y);
    }
    Ok(Trajectory {
        inputs,
        outputs,
        hidden_states: None,
        input_variances,
        meas_noise_variances,
        initial_state,
    })
}

fn run_seed(
    cfg: &ExperimentConfig,
    sys: &BrunovskySystem,
    truth: &MarkovMatrix,
    eta: f64,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let dims = sys.dims();
    let every = cfg.checkpoint_every;
    match cfg.algorithm {
        Algorithm::OfflineSgd => {
            let traj = make_trajectory(cfg, sys, seed)?;
            let mut state = offline_sgd_prepare(&traj, cfg.t, eta)?;
            let mut rng = rand_seed(seed ^ SAMPLING_SALT);
            let n_iters = cfg.n_iters();
            let mut rows = Vec::new();
            for iter in 1..=n_iters {
                offline_sgd_iteration(&mut state, &traj, cfg.t, &mut rng)?;
                if is_checkpoint(iter, every, n_iters) {
                    rows.push(TraceRow::markov_only(
                        iter,
                        markov_error(state.theta_hat(), truth)?,
                    ));
                }
            }
            Ok(rows)
        }
        Algorithm::OnlineSgd => {
            let stream = make_stream(cfg, sys, seed)?;
            let mut online = OnlineSgd::new(dims.p, dims.m, cfg.t, eta)?;
            let mut rows = Vec::new();
            let last = cfg.n_samples as u64;
            for (u, y) in stream.take(cfg.n_samples) {
                online.feed(u, &y)?;
                let t = online.pairs_seen();
                if t >= cfg.t as u64 && is_checkpoint(t, every, last) {
                    rows.push(TraceRow::markov_only(
                        t,
                        markov_error(online.theta_hat(), truth)?,
                    ));
                }
            }
            Ok(rows)
        }
        Algorithm::OnlineCombined => {
            let stream = make_stream(cfg, sys, seed)?;
            let trace = run_online_combined(stream, dims, cfg.t, eta, cfg.n_samples as u64, every)?;
            trace
                .iter()
                .map(|cp| {
                    let (a, c, d) = cp.params.error_vs(sys);
                    Ok(TraceRow::full(
                        cp.iteration,
                        markov_error(&cp.theta, truth)?,
                        a,
                        c,
                        d,
                    ))
                })
                .collect()
        }
        Algorithm::OfflineCombined => {
            let traj = make_trajectory(cfg, sys, seed)?;
            let trace = run_offline_combined(
                &traj,
                dims,
                cfg.t,
                eta,
                cfg.n_iters(),
                seed ^ SAMPLING_SALT,
                every,
            )?;
            trace
                .iter()
                .map(|cp| {
                    let (a, c, d) = cp.params.error_vs(sys);
                    Ok(TraceRow::full(
                        cp.iteration,
                        markov_error(&cp.theta, truth)?,
                        a,
                        c,
                        d,
                    ))
                })
                .collect()
        }
        Algorithm::OnlinePinv => {
            let stream = make_stream(cfg, sys, seed)?;
            let trace = run_online_pseudoinverse(stream, dims, cfg.t, cfg.n_samples as u64, every)?;
            trace
                .iter()
                .map(|cp| {
                    let (a, c, d) = cp.params.error_vs(sys);
                    Ok(TraceRow::full(
                        cp.iteration,
                        markov_error(&cp.theta, truth)?,
                        a,
                        c,
                        d,
                    ))
                })
                .collect()
        }
        Algorithm::HoKalman => {
            // Least-squares Markov estimates on growing prefixes, then the
            // aligned SVD realization; a_err is the state-matrix Frobenius
            // distance (there is no coefficient vector to compare).
            let traj = make_trajectory(cfg, sys, seed)?;
            let (a_true, _) = assemble_state_matrices(sys);
            let mut rows = Vec::new();
            let last = cfg.n_samples as u64;
            let mut t = 2 * cfg.t as u64;
            while t <= last {
                if is_checkpoint(t, every, last) {
                    let mut prefix = traj.clone();
                    prefix.inputs.truncate(t as usize);
                    prefix.outputs.truncate(t as usize);
                    let theta = least_squares_markov(&prefix, cfg.t)?;
                    let hk = ho_kalman(&theta, dims, Some(sys))?;
                    rows.push(TraceRow::full(
                        t,
                        markov_error(&theta, truth)?,
                        (&hk.a_hat - &a_true).norm(),
                        (&hk.c_hat - sys.c_matrix()).norm(),
                        (&hk.d_hat - sys.d_matrix()).norm(),
                    ));
                }
                t += 1;
            }
            if rows.is_empty() {
                return Err(SysIdError::Precondition(
                    "no checkpoints at or beyond 2T".into(),
                ));
            }
            Ok(rows)
        }
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Counts checkpoints whose squared Markov error exceeds the SGD bound
/// curve. Online variants substitute the pair count for the batch size and
/// are only compared from `t >= 2T` on.
fn bound_violations(
    cfg: &ExperimentConfig,
    sys: &BrunovskySystem,
    truth_norm: f64,
    eta: f64,
    rows: &[TraceRow],
) -> Result<(usize, usize)> {
    let online = matches!(
        cfg.algorithm,
        Algorithm::OnlineSgd | Algorithm::OnlineCombined
    );
    let base = BoundInputs::from_system(
        sys,
        cfg.t,
        cfg.n_samples,
        &cfg.input_variances(),
        &cfg.noise_variances(),
        eta,
    )?;
    let mut violated = 0;
    let mut compared = 0;
    for row in rows {
        let b = if online {
            if row.iter < 2 * cfg.t as u64 {
                continue;
            }
            base.clone().with_batch_size(row.iter as usize)
        } else {
            base.clone()
        };
        let omega0 = truth_norm + b.chi_n()?;
        let value = b.with_omega0_norm(omega0).sgd_bound_curve(&[row.iter])?[0];
        compared += 1;
        if row.markov_err * row.markov_err > value {
            violated += 1;
        }
    }
    Ok((violated, compared))
}

/// Full experiment: per-seed traces written as `trace_seed{K}.csv` under
/// `out_dir`, summary returned (and written as `summary.json`).
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SummaryReport> {
    std::fs::create_dir_all(out_dir)?;
    let dims = cfg.dims()?;
    let sys = generate_system(dims, cfg.rho_max, cfg.system_seed)?;
    let truth = true_markov(&sys, cfg.t)?;
    let (eta, eta_warning) = cfg.resolve_eta();
    let traces = for_each_seed(&cfg.seeds, |seed| {
        run_seed(cfg, &sys, &truth, eta, seed).map_err(|e| with_seed_context(e, seed))
    })?;

    let sgd_bounds_apply = cfg.algorithm.is_sgd() && !eta_warning;
    let truth_norm = truth.as_matrix().norm();
    let mut per_seed = Vec::new();
    for (seed, rows) in cfg.seeds.iter().zip(&traces) {
        write_trace(&out_dir.join(format!("trace_seed{seed}.csv")), rows)?;
        let last = rows
            .last()
            .ok_or_else(|| SysIdError::Precondition(format!("seed {seed}: empty trace")))?;
        let iters: Vec<u64> = rows.iter().map(|r| r.iter).collect();
        let errs: Vec<f64> = rows
            .iter()
            .map(|r| r.param_err().unwrap_or(r.markov_err))
            .collect();
        let violations = if sgd_bounds_apply {
            Some(bound_violations(cfg, &sys, truth_norm, eta, rows)?)
        } else {
            None
        };
        per_seed.push(SeedSummary {
            seed: *seed,
            final_iter: last.iter,
            final_markov_err: last.markov_err,
            final_a_err: last.a_err,
            final_c_err: last.c_err,
            final_d_err: last.d_err,
            final_param_err: last.param_err(),
            slope: fit_log_error(&iters, &errs),
            bound_violations: violations,
        });
    }

    let (median_final_markov_err, quartile_final_markov_err) =
        quantiles(per_seed.iter().map(|s| s.final_markov_err)).expect("at least one seed");
    let param_q = quantiles(per_seed.iter().filter_map(|s| s.final_param_err));
    let slope_q = quantiles(per_seed.iter().filter_map(|s| s.slope.map(|f| f.slope)));
    let report = SummaryReport {
        algorithm: cfg.algorithm,
        eta,
        eta_cap: sysid_core::bounds::step_size_cap(cfg.m, cfg.t, cfg.input_std * cfg.input_std),
        eta_star: sysid_core::bounds::step_size_star(cfg.m, cfg.t, cfg.input_std * cfg.input_std),
        eta_warning,
        rho: sys.spectral_radius(),
        median_final_markov_err,
        quartile_final_markov_err,
        median_final_param_err: param_q.map(|q| q.0),
        quartile_final_param_err: param_q.map(|q| q.1),
        median_slope: slope_q.map(|q| q.0),
        bound_violation_cells: per_seed
            .iter()
            .filter_map(|s| s.bound_violations)
            .map(|v| v.0)
            .sum(),
        bound_compared_cells: per_seed
            .iter()
            .filter_map(|s| s.bound_violations)
            .map(|v| v.1)
            .sum(),
        per_seed,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareSeed {
    pub seed: u64,
    pub final_direct_a_err: f64,
    pub final_hokalman_a_err: f64,
    pub direct_wins: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub per_seed: Vec<CompareSeed>,
    pub direct_wins: usize,
    pub seeds: usize,
}

/// Head-to-head on identical Markov estimates: direct recovery vs the
/// aligned Ho-Kalman realization. Both traces log `a_err` as the
/// state-matrix Frobenius distance so the columns are comparable.
pub fn run_compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CompareReport> {
    std::fs::create_dir_all(out_dir)?;
    let dims = cfg.dims()?;
    let sys = generate_system(dims, cfg.rho_max, cfg.system_seed)?;
    let truth = true_markov(&sys, cfg.t)?;
    let (a_true, _) = assemble_state_matrices(&sys);

    let results = for_each_seed(&cfg.seeds, |seed| {
        compare_seed(cfg, &sys, &truth, &a_true, seed).map_err(|e| with_seed_context(e, seed))
    })?;

    let mut per_seed = Vec::new();
    for (seed, (direct_rows, hk_rows)) in cfg.seeds.iter().zip(&results) {
        write_trace(&out_dir.join(format!("direct_seed{seed}.csv")), direct_rows)?;
        write_trace(&out_dir.join(format!("hokalman_seed{seed}.csv")), hk_rows)?;
        let d = direct_rows.last().and_then(|r| r.a_err).unwrap_or(f64::NAN);
        let h = hk_rows.last().and_then(|r| r.a_err).unwrap_or(f64::NAN);
        per_seed.push(CompareSeed {
            seed: *seed,
            final_direct_a_err: d,
            final_hokalman_a_err: h,
            direct_wins: d <= h,
        });
    }
    let report = CompareReport {
        direct_wins: per_seed.iter().filter(|s| s.direct_wins).count(),
        seeds: per_seed.len(),
        per_seed,
    };
    std::fs::write(
        out_dir.join("compare.json"),
        serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    Ok(report)
}

type RowPair = (Vec<TraceRow>, Vec<TraceRow>);

fn compare_seed(
    cfg: &ExperimentConfig,
    sys: &BrunovskySystem,
    truth: &MarkovMatrix,
    a_true: &nalgebra::DMatrix<f64>,
    seed: u64,
) -> Result<RowPair> {
    let dims = sys.dims();
    let traj = make_trajectory(cfg, sys, seed)?;
    let mut direct_rows = Vec::new();
    let mut hk_rows = Vec::new();
    let last = cfg.n_samples as u64;
    for t in (2 * cfg.t as u64)..=last {
        if !is_checkpoint(t, cfg.checkpoint_every, last) {
            continue;
        }
        let mut prefix = traj.clone();
        prefix.inputs.truncate(t as usize);
        prefix.outputs.truncate(t as usize);
        let theta = least_squares_markov(&prefix, cfg.t)?;
        let markov_err = markov_error(&theta, truth)?;

        let params = recover_from_markov(&theta, dims)?;
        let a_direct = companion_block_matrix(params.char_coeffs.as_slice(), dims.m);
        let (_, c_err, d_err) = params.error_vs(sys);
        direct_rows.push(TraceRow::full(
            t,
            markov_err,
            (&a_direct - a_true).norm(),
            c_err,
            d_err,
        ));

        let hk = ho_kalman(&theta, dims, Some(sys))?;
        hk_rows.push(TraceRow::full(
            t,
            markov_err,
            (&hk.a_hat - a_true).norm(),
            (&hk.c_hat - sys.c_matrix()).norm(),
            (&hk.d_hat - sys.d_matrix()).norm(),
        ));
    }
    if direct_rows.is_empty() {
        return Err(SysIdError::Precondition(
            "no checkpoints at or beyond 2T; increase n_samples".into(),
        ));
    }
    Ok((direct_rows, hk_rows))
}

/// Evaluates the SGD bound curve for a config at explicit iteration counts.
pub fn bound_curve_for(cfg: &ExperimentConfig, iters: &[u64]) -> Result<Vec<f64>> {
    let dims = cfg.dims()?;
    let sys = generate_system(dims, cfg.rho_max, cfg.system_seed)?;
    let truth = true_markov(&sys, cfg.t)?;
    let (eta, _) = cfg.resolve_eta();
    let b = BoundInputs::from_system(
        &sys,
        cfg.t,
        cfg.n_samples,
        &cfg.input_variances(),
        &cfg.noise_variances(),
        eta,
    )?;
    let omega0 = truth.as_matrix().norm() + b.chi_n()?;
    b.with_omega0_norm(omega0).sgd_bound_curve(iters)
}

pub fn default_out_dir(cfg: &ExperimentConfig, cli_override: Option<&str>) -> PathBuf {
    if let Some(dir) = cli_override {
        return PathBuf::from(dir);
    }
    if let Some(dir) = &cfg.out_dir {
        return PathBuf::from(dir);
    }
    PathBuf::from("runs")
}
