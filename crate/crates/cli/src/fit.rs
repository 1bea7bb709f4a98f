//! Slope fitting on error traces.

/// Least-squares line fit diagnostics.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Plain least-squares line through `(x, y)` pairs.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<FitResult> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs[..n]
        .iter()
        .zip(&ys[..n])
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let syy: f64 = ys[..n].iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        0.0
    };
    Some(FitResult {
        slope,
        intercept: my - slope * mx,
        r2,
        n_points: n,
    })
}

/// Index of the first checkpoint of a run of 5 consecutive checkpoints all
/// within 2x the final error — the convergence floor. Checkpoints before it
/// form the fitting regime. The final error level is the 90th percentile of
/// the trace's last half: the floor hovers with several-fold jitter, and a
/// cap tied to one low sample would push the detected floor deep into the
/// hover region.
pub fn floor_start(errors: &[f64]) -> usize {
    if errors.is_empty() {
        return 0;
    }
    let tail_len = (errors.len() / 2).max(1);
    let mut tail: Vec<f64> = errors[errors.len() - tail_len..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let final_err = tail[(9 * (tail.len() - 1)).div_ceil(10)];
    let cap = 2.0 * final_err;
    let run = 5.min(errors.len());
    for start in 0..errors.len() {
        if start + run <= errors.len() && errors[start..start + run].iter().all(|&e| e <= cap) {
            return start;
        }
    }
    errors.len()
}

/// Fits `ln(error)` against iteration over the [10%, 90%] band of the
/// pre-floor checkpoints.
pub fn fit_log_error(iterations: &[u64], errors: &[f64]) -> Option<FitResult> {
    let n = iterations.len().min(errors.len());
    let pre = floor_start(&errors[..n]);
    if pre < 2 {
        return None;
    }
    let lo = ((0.10 * pre as f64).floor() as usize).min(pre - 1);
    let hi = ((0.90 * pre as f64).ceil() as usize).clamp(lo + 1, pre);
    let xs: Vec<f64> = iterations[lo..hi].iter().map(|&i| i as f64).collect();
    let ys: Vec<f64> = errors[lo..hi].iter().map(|&e| e.max(1e-300).ln()).collect();
    fit_line(&xs, &ys)
}

/// Log-log fit, for error-versus-sample-count decay rates.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<FitResult> {
    let lx: Vec<f64> = xs.iter().map(|&x| x.max(1e-300).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| y.max(1e-300).ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [5.0, 3.0, 1.0, -1.0];
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 5.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn floor_detection() {
        // decays for 6 checkpoints then flat within 2x of the final value
        let errs = [100.0, 50.0, 20.0, 8.0, 3.0, 1.2, 1.0, 1.1, 0.9, 1.0];
        let f = floor_start(&errs);
        assert_eq!(
            f, 5,
            "floor should start where 5 values sit within 2x final"
        );
        let no_floor = [100.0, 50.0, 20.0, 8.0];
        assert_eq!(floor_start(&no_floor), 4); // no floor: everything pre-floor
    }

    #[test]
    fn geometric_decay_fits_cleanly() {
        let iters: Vec<u64> = (0..30).map(|i| i * 100).collect();
        let errs: Vec<f64> = (0..30).map(|i| 10.0 * 0.8f64.powi(i)).collect();
        let fit = fit_log_error(&iters, &errs).unwrap();
        assert!(fit.slope < 0.0);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn inverse_sqrt_decay_has_half_slope() {
        let xs: Vec<f64> = (9..15).map(|k| (1u64 << k) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x.sqrt()).collect();
        let fit = fit_log_log(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-10);
    }
}
