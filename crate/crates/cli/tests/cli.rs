//! End-to-end checks of the `sysid` binary: artifact formats, exit codes,
//! and summary/trace consistency.

use std::path::Path;
use std::process::Command;

fn sysid() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sysid"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn generate_simulate_estimate_recover_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sys_path = dir.path().join("sys.json");
    let traj_path = dir.path().join("traj.csv");
    let theta_path = dir.path().join("theta.json");
    let params_path = dir.path().join("params.json");
    let trace_path = dir.path().join("trace.csv");

    let st = sysid()
        .args(["generate", "--n", "2", "--m", "1", "--p", "1"])
        .args(["--rho-max", "0.5", "--seed", "3"])
        .arg("--out")
        .arg(&sys_path)
        .status()
        .unwrap();
    assert!(st.success());

    let st = sysid()
        .arg("simulate")
        .arg("--system")
        .arg(&sys_path)
        .args([
            "--steps",
            "4000",
            "--input-std",
            "1.0",
            "--noise-std",
            "0.0",
            "--seed",
            "1",
        ])
        .arg("--out")
        .arg(&traj_path)
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(&traj_path).unwrap();
    assert!(csv.starts_with("t,u_1,y_1\n"));

    let st = sysid()
        .arg("estimate")
        .arg("--traj")
        .arg(&traj_path)
        .args(["--t", "16", "--method", "ls"])
        .arg("--out")
        .arg(&theta_path)
        .arg("--system")
        .arg(&sys_path)
        .arg("--trace")
        .arg(&trace_path)
        .status()
        .unwrap();
    assert!(st.success());
    let trace = std::fs::read_to_string(&trace_path).unwrap();
    assert!(trace.starts_with("iter,markov_err,a_err,c_err,d_err\n"));

    let st = sysid()
        .arg("recover")
        .arg("--theta")
        .arg(&theta_path)
        .args(["--n", "2", "--m", "1", "--p", "1"])
        .arg("--out")
        .arg(&params_path)
        .status()
        .unwrap();
    assert!(st.success());

    // recovered coefficients match the generating system closely
    let sys: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sys_path).unwrap()).unwrap();
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&params_path).unwrap()).unwrap();
    let a_true: Vec<f64> = sys["char_coeffs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let a_hat: Vec<f64> = params["a"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (x, y) in a_true.iter().zip(&a_hat) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
    assert!(params["ls_residual"].as_f64().unwrap() >= 0.0);
    assert!(params["imag_residual"].as_f64().unwrap() >= 0.0);
}

#[test]
fn usage_error_exits_2_runtime_error_exits_1() {
    let out = sysid().arg("no-such-subcommand").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = sysid()
        .args(["generate", "--n", "2", "--m", "1", "--p", "1"])
        .args([
            "--rho-max",
            "1.5",
            "--seed",
            "0",
            "--out",
            "/tmp/never.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "stderr: {err}");

    let out = sysid()
        .args(["simulate", "--system", "/no/such/file.json"])
        .args(["--steps", "10", "--out", "/tmp/never.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_writes_traces_and_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let out_dir = dir.path().join("runs");
    write(
        &cfg_path,
        r#"{
            "n": 2, "m": 1, "p": 1, "rho_max": 0.5, "t": 8,
            "n_samples": 3000, "eta": "auto", "noise_std": 0.02,
            "input_std": 1.0, "algorithm": "online-combined",
            "seeds": [0, 1, 2, 3, 4], "system_seed": 9,
            "checkpoint_every": 300
        }"#,
    );
    let st = sysid()
        .arg("experiment")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(out_dir.to_str().unwrap())
        .status()
        .unwrap();
    assert!(st.success());

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    // medians must be recomputable from the per-seed trace files
    let mut finals = Vec::new();
    for seed in 0..5 {
        let rows =
            sysid_cli::trace::read_trace(&out_dir.join(format!("trace_seed{seed}.csv"))).unwrap();
        assert!(!rows.is_empty());
        finals.push(rows.last().unwrap().markov_err);
    }
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = finals[2];
    let reported = summary["median_final_markov_err"].as_f64().unwrap();
    assert!(
        (median - reported).abs() <= 1e-12 * median.max(1.0),
        "summary median {reported} vs recomputed {median}"
    );
    assert_eq!(summary["per_seed"].as_array().unwrap().len(), 5);
}

#[test]
fn bound_subcommand_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let out = dir.path().join("bounds.csv");
    write(
        &cfg_path,
        r#"{
            "n": 2, "m": 1, "p": 1, "rho_max": 0.5, "t": 8,
            "n_samples": 2000, "eta": "auto", "noise_std": 0.1,
            "input_std": 1.0, "algorithm": "offline-sgd",
            "seeds": [0], "system_seed": 2
        }"#,
    );
    let st = sysid()
        .arg("bound")
        .arg("--config")
        .arg(&cfg_path)
        .args(["--iters", "0,1000,10000"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,bound_value");
    assert_eq!(lines.len(), 4);
    let values: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    // geometric term decays with tau
    assert!(values[0] > values[1] && values[1] >= values[2]);
}

#[test]
fn compare_subcommand_writes_paired_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let out_dir = dir.path().join("cmp");
    write(
        &cfg_path,
        r#"{
            "n": 2, "m": 2, "p": 2, "rho_max": 0.6, "t": 18,
            "n_samples": 4096, "eta": "auto", "noise_std": 0.1,
            "input_std": 1.0, "algorithm": "online-pinv",
            "seeds": [0, 1], "system_seed": 4,
            "checkpoint_every": 2048
        }"#,
    );
    let st = sysid()
        .arg("compare")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(out_dir.to_str().unwrap())
        .status()
        .unwrap();
    assert!(st.success());
    for seed in 0..2 {
        let d =
            sysid_cli::trace::read_trace(&out_dir.join(format!("direct_seed{seed}.csv"))).unwrap();
        let h = sysid_cli::trace::read_trace(&out_dir.join(format!("hokalman_seed{seed}.csv")))
            .unwrap();
        assert_eq!(d.len(), h.len());
        // identical Markov estimates feed both methods
        for (a, b) in d.iter().zip(&h) {
            assert_eq!(a.iter, b.iter);
            assert_eq!(a.markov_err, b.markov_err);
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("compare.json")).unwrap())
            .unwrap();
    assert_eq!(report["seeds"].as_u64(), Some(2));
}

#[test]
fn experiment_summary_slope_is_linear_for_combined_runs() {
    // Noise-free online-combined run: the summary's fitted log-error slope
    // must be negative with a tight fit.
    let cfg = sysid_cli::config::ExperimentConfig::from_json(
        r#"{
            "n": 5, "m": 1, "p": 1, "rho_max": 0.4, "t": 24,
            "n_samples": 40000, "eta": "auto", "noise_std": 0.0,
            "input_std": 1.0, "algorithm": "online-combined",
            "seeds": [0, 1, 2], "system_seed": 13,
            "checkpoint_every": 200
        }"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = sysid_cli::experiment::run_experiment(&cfg, dir.path()).unwrap();
    assert!(report.median_slope.unwrap() < 0.0);
    for s in &report.per_seed {
        let fit = s.slope.unwrap();
        assert!(
            fit.slope < 0.0 && fit.r2 >= 0.9,
            "seed {}: slope {:.3e} r2 {:.3}",
            s.seed,
            fit.slope,
            fit.r2
        );
    }
    assert_eq!(report.bound_violation_cells, 0);
}

#[test]
fn online_pinv_trace_decays_like_inverse_sqrt() {
    // Each online-pinv checkpoint is a batch solve on the prefix, so one
    // trace is an N-sweep; the Markov error over seeds decays ~ 1/sqrt(N).
    let cfg = sysid_cli::config::ExperimentConfig::from_json(
        r#"{
            "n": 2, "m": 1, "p": 1, "rho_max": 0.6, "t": 16,
            "n_samples": 16384, "eta": "auto", "noise_std": 0.1,
            "input_std": 1.0, "algorithm": "online-pinv",
            "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9], "system_seed": 11,
            "checkpoint_every": 512
        }"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_and_fit_pinv_sweep(&cfg, dir.path());
}

fn run_and_fit_pinv_sweep(cfg: &sysid_cli::config::ExperimentConfig, dir: &std::path::Path) {
    sysid_cli::experiment::run_experiment(cfg, dir).unwrap();
    let mut mean_by_iter: std::collections::BTreeMap<u64, (f64, usize)> =
        std::collections::BTreeMap::new();
    for seed in &cfg.seeds {
        let rows =
            sysid_cli::trace::read_trace(&dir.join(format!("trace_seed{seed}.csv"))).unwrap();
        for r in rows {
            let e = mean_by_iter.entry(r.iter).or_insert((0.0, 0));
            e.0 += r.markov_err;
            e.1 += 1;
        }
    }
    let xs: Vec<f64> = mean_by_iter.keys().map(|&i| i as f64).collect();
    let ys: Vec<f64> = mean_by_iter.values().map(|&(s, c)| s / c as f64).collect();
    let fit = sysid_cli::fit::fit_log_log(&xs, &ys).unwrap();
    assert!(
        (-0.65..=-0.35).contains(&fit.slope),
        "pinv sweep slope {:.3} (r2 {:.3})",
        fit.slope,
        fit.r2
    );
}
