use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use sysid_cli::config::ExperimentConfig;
use sysid_cli::experiment::{bound_curve_for, default_out_dir, run_compare, run_experiment};
use sysid_cli::trace::{write_bound_curve, write_trace, TraceRow};
use sysid_core::estimation::{
    least_squares_markov, markov_error, offline_sgd_iteration, offline_sgd_prepare, OnlineSgd,
};
use sysid_core::lti::{
    generate_system, simulate, true_markov, BrunovskySystem, SystemDims, Trajectory,
};
use sysid_core::recovery::recover_from_markov;
use sysid_core::Result;

/// Identification of stable Brunovsky-form LTI systems from a single
/// input/output trajectory.
#[derive(Parser)]
#[command(name = "sysid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateMethod {
    Ls,
    OfflineSgd,
    OnlineSgd,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random stable system and write it as JSON.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.9)]
        rho_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a trajectory from a system JSON and write it as CSV.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        input_std: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Optional process-noise standard deviation on the state update.
        #[arg(long)]
        process_noise_std: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the truncated Markov matrix from a trajectory CSV.
    Estimate {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long, value_enum, default_value = "ls")]
        method: EstimateMethod,
        /// Step size for the SGD methods; defaults to the fastest-rate
        /// prescription for unit input variance.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth system JSON; enables the error trace.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Error-trace CSV path (requires --system).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        checkpoint_every: u64,
    },
    /// Recover characteristic coefficients and C from a Markov estimate.
    Recover {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the SGD error-bound curve for a config.
    Bound {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated iteration counts.
        #[arg(long, value_delimiter = ',')]
        iters: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured multi-seed experiment; traces plus summary JSON.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<String>,
    },
    /// Direct recovery vs aligned Ho-Kalman on identical Markov estimates.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<String>,
    },
}

fn load_system(path: &PathBuf) -> Result<BrunovskySystem> {
    BrunovskySystem::from_json(&std::fs::read_to_string(path)?)
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            n,
            m,
            p,
            rho_max,
            seed,
            out,
        } => {
            let sys = generate_system(SystemDims::new(n, m, p)?, rho_max, seed)?;
            std::fs::write(&out, sys.to_json())?;
            eprintln!(
                "wrote {} (spectral radius {:.4})",
                out.display(),
                sys.spectral_radius()
            );
            Ok(())
        }
        Command::Simulate {
            system,
            steps,
            input_std,
            noise_std,
            process_noise_std,
            seed,
            out,
        } => {
            let sys = load_system(&system)?;
            let dims = sys.dims();
            let process = process_noise_std.map(|s| DVector::from_element(dims.state_dim(), s * s));
            let traj = simulate(
                &sys,
                steps,
                &DVector::from_element(dims.m, input_std * input_std),
                &DVector::from_element(dims.p, noise_std * noise_std),
                process.as_ref(),
                DVector::zeros(dims.state_dim()),
                seed,
            )?;
            std::fs::write(&out, traj.to_csv())?;
            eprintln!("wrote {} ({steps} samples)", out.display());
            Ok(())
        }
        Command::Estimate {
            traj,
            t,
            method,
            eta,
            iters,
            seed,
            out,
            system,
            trace,
            checkpoint_every,
        } => {
            let data = Trajectory::from_csv(&std::fs::read_to_string(&traj)?)?;
            let truth = system
                .as_ref()
                .map(|p| -> Result<_> {
                    let sys = load_system(p)?;
                    true_markov(&sys, t)
                })
                .transpose()?;
            let m = data.inputs[0].len();
            let p = data.outputs[0].len();
            let eta = eta.unwrap_or_else(|| sysid_core::bounds::step_size_star(m, t, 1.0));
            let mut rows: Vec<TraceRow> = Vec::new();
            let mut checkpoint = |iter: u64, est: &sysid_core::lti::MarkovMatrix| -> Result<()> {
                if let Some(truth) = &truth {
                    rows.push(TraceRow::markov_only(iter, markov_error(est, truth)?));
                }
                Ok(())
            };
            let est = match method {
                EstimateMethod::Ls => {
                    let est = least_squares_markov(&data, t)?;
                    checkpoint(data.len() as u64, &est)?;
                    est
                }
                EstimateMethod::OfflineSgd => {
                    let mut state = offline_sgd_prepare(&data, t, eta)?;
                    let mut rng = {
                        use rand_chacha::rand_core::SeedableRng;
                        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
                    };
                    for iter in 1..=iters {
                        offline_sgd_iteration(&mut state, &data, t, &mut rng)?;
                        if iter % checkpoint_every == 0 || iter == iters {
                            checkpoint(iter, state.theta_hat())?;
                        }
                    }
                    state.theta_hat().clone()
                }
                EstimateMethod::OnlineSgd => {
                    let mut online = OnlineSgd::new(p, m, t, eta)?;
                    let last = data.len() as u64;
                    for k in 0..data.len() {
                        online.feed(data.inputs[k].clone(), &data.outputs[k])?;
                        let it = online.pairs_seen();
                        if it >= t as u64 && (it % checkpoint_every == 0 || it == last) {
                            checkpoint(it, online.theta_hat())?;
                        }
                    }
                    online.theta_hat().clone()
                }
            };
            std::fs::write(&out, est.to_json())?;
            if let Some(trace_path) = trace {
                write_trace(&trace_path, &rows)?;
                eprintln!("wrote {}", trace_path.display());
            }
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Recover {
            theta,
            n,
            m,
            p,
            out,
        } => {
            let est = sysid_core::lti::MarkovMatrix::from_json(&std::fs::read_to_string(&theta)?)?;
            let params = recover_from_markov(&est, SystemDims::new(n, m, p)?)?;
            std::fs::write(&out, params.to_json())?;
            eprintln!(
                "wrote {} (ls residual {:.3e}, imag residual {:.3e})",
                out.display(),
                params.ls_residual,
                params.imag_residual
            );
            Ok(())
        }
        Command::Bound { config, iters, out } => {
            let cfg = load_config(&config)?;
            let values = bound_curve_for(&cfg, &iters)?;
            write_bound_curve(&out, &iters, &values)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Experiment { config, out_dir } => {
            let cfg = load_config(&config)?;
            let dir = default_out_dir(&cfg, out_dir.as_deref());
            let report = run_experiment(&cfg, &dir)?;
            if report.eta_warning {
                eprintln!(
                    "warning: step size {} exceeds the convergence cap {}",
                    report.eta, report.eta_cap
                );
            }
            eprintln!(
                "median final markov error {:.6e} over {} seeds -> {}",
                report.median_final_markov_err,
                report.per_seed.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Compare { config, out_dir } => {
            let cfg = load_config(&config)?;
            let dir = default_out_dir(&cfg, out_dir.as_deref());
            let report = run_compare(&cfg, &dir)?;
            eprintln!(
                "direct recovery wins {}/{} seeds -> {}",
                report.direct_wins,
                report.seeds,
                dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap handles usage errors itself with exit code 2
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
