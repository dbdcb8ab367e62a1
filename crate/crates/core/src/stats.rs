//! Small numeric helpers shared by the probes and the fitter.

/// Neumaier-compensated sum; order-stable to far below 1e-12 for probe-sized inputs.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated mean, clamped to [min, max] so rounding never leaves the range.
pub fn mean(values: &[f64]) -> f64 {
    let m = compensated_sum(values.iter().copied()) / values.len() as f64;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if m.is_nan() || values.is_empty() {
        m
    } else {
        m.clamp(lo, hi)
    }
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64
}

/// Monte-Carlo standard error of the mean.
pub fn stderr(values: &[f64]) -> f64 {
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Mean and standard error together.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    (mean(values), stderr(values))
}

/// Ratio of means E[a]/E[b] from paired samples with a delta-method standard error.
pub fn ratio_of_means(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, mb) = (mean(a), mean(b));
    let r = ma / mb;
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - r * y).collect();
    (r, stderr(&resid) / mb.abs())
}
