//! Learning-rate sweeps, AM-μP calibration, log–log power-law fits,
//! segmented two-anchor prediction and the L^{-3/2} transfer rule.

use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::arch::ArchSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::initialize;
use crate::netcore::Loss;
use crate::probes::{second_moments, ProbeSettings};
use crate::rng::{derive_seed, Rng};
use crate::stats::{mean, sample_variance};

/// Geometric learning-rate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    etas: Vec<f64>,
}

impl Default for SweepGrid {
    /// 40 log-spaced points from 1e-4 to 1e1.
    fn default() -> Self {
        Self::geometric(40, 1e-4, 1e1).expect("default grid is valid")
    }
}

impl SweepGrid {
    pub fn geometric(count: usize, min: f64, max: f64) -> Result<Self> {
        if count < 2 || !(min > 0.0) || !(max > min) || !max.is_finite() {
            return Err(Error::Invalid(format!("grid needs count >= 2 and 0 < min < max (got {count}, {min}, {max})")));
        }
        let (lo, hi) = (min.log10(), max.log10());
        let step = (hi - lo) / (count - 1) as f64;
        let etas = (0..count).map(|i| 10f64.powf(lo + step * i as f64)).collect();
        Ok(Self { etas })
    }

    /// Arbitrary grid; must be strictly increasing and positive.
    pub fn from_values(etas: Vec<f64>) -> Result<Self> {
        if etas.is_empty() || etas.iter().any(|&e| !(e > 0.0) || !e.is_finite()) || etas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("grid values must be positive, finite and strictly increasing".into()));
        }
        Ok(Self { etas })
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }

    /// Mean spacing in dex.
    pub fn spacing_dex(&self) -> f64 {
        if self.etas.len() < 2 {
            return 0.0;
        }
        (self.etas[self.etas.len() - 1] / self.etas[0]).log10() / (self.etas.len() - 1) as f64
    }
}

/// What a sweep maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionRule {
    ValAccuracy,
    /// Maximizes the decrease of validation loss over training.
    ValLoss,
}

impl SelectionRule {
    pub fn id(self) -> &'static str {
        match self {
            SelectionRule::ValAccuracy => "val_accuracy",
            SelectionRule::ValLoss => "val_loss",
        }
    }
}

/// Training budget of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub epochs: usize,
    pub batch: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { epochs: 1, batch: 128 }
    }
}

/// Outcome of training one fresh model at one learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOutcome {
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub initial_val_loss: f64,
    /// Non-finite loss at any step, or final validation loss above 10× its initial value.
    pub diverged: bool,
    pub steps: usize,
}

fn evaluate(model: &crate::netcore::Model, data: &Dataset) -> Result<(f64, f64)> {
    let chunk = 512;
    let n = data.val_len();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let (x, y) = data.val_batch(&idx, &model.spec)?;
        let out = match model.forward(&x) {
            Ok(t) => t.output,
            Err(Error::NonFinite { .. }) => return Ok((0.0, f64::INFINITY)),
            Err(e) => return Err(e),
        };
        let (l, _) = Loss::CrossEntropy.value_and_grad(&out, &y)?;
        loss += l * idx.len() as f64;
        let c = data.classes;
        for (s, &i) in idx.iter().enumerate() {
            let row = &out.data()[s * c..(s + 1) * c];
            let arg = row.iter().enumerate().fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            correct += usize::from(arg == data.val_y[i]);
        }
    }
    Ok((correct as f64 / n as f64, loss / n as f64))
}

/// Train a fresh model (seeded by `seed`) with plain SGD on cross-entropy.
pub fn train(spec: &ArchSpec, data: &Dataset, eta: f64, budget: Budget, seed: u64) -> Result<TrainOutcome> {
    data.check_spec(spec)?;
    if budget.batch == 0 || budget.epochs == 0 {
        return Err(Error::Invalid("budget needs positive epochs and batch".into()));
    }
    let mut model = initialize(spec, seed)?;
    let (_, initial_val_loss) = evaluate(&model, data)?;
    let mut order: Vec<usize> = (0..data.train_len()).collect();
    let mut rng = Rng::substream(seed, 0x5eed);
    let mut steps = 0;
    let diverged_outcome = |steps| TrainOutcome {
        val_accuracy: 0.0,
        val_loss: f64::INFINITY,
        initial_val_loss,
        diverged: true,
        steps,
    };
    for _ in 0..budget.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for idx in order.chunks_exact(budget.batch) {
            let (x, y) = data.train_batch(idx, spec)?;
            let trace = match model.forward(&x) {
                Ok(t) => t,
                Err(Error::NonFinite { .. }) => return Ok(diverged_outcome(steps)),
                Err(e) => return Err(e),
            };
            let grads = model.backward(&trace, &y, Loss::CrossEntropy)?;
            if !grads.loss.is_finite() {
                return Ok(diverged_outcome(steps));
            }
            match model.sgd_step_in_place(&grads, eta) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => return Ok(diverged_outcome(steps)),
                Err(e) => return Err(e),
            }
            steps += 1;
        }
    }
    let (val_accuracy, val_loss) = evaluate(&model, data)?;
    let diverged = !val_loss.is_finite() || val_loss > 10.0 * initial_val_loss;
    Ok(TrainOutcome { val_accuracy, val_loss, initial_val_loss, diverged, steps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub eta: f64,
    pub metric: f64,
    pub diverged: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub depth: usize,
    pub seed: u64,
    pub rule: SelectionRule,
    pub points: Vec<SweepPoint>,
    /// None when every point diverged.
    pub eta_star: Option<f64>,
    /// The selected η sits on a grid endpoint, so the grid may be too narrow.
    pub endpoint_hit: bool,
}

/// Index of the best non-diverged point; ties go to the smaller η.
pub fn select(points: &[SweepPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if p.diverged || !p.metric.is_finite() {
            continue;
        }
        match best {
            Some(b) if points[b].metric >= p.metric => {}
            _ => best = Some(i),
        }
    }
    best
}

impl SweepResult {
    pub fn from_points(depth: usize, seed: u64, rule: SelectionRule, points: Vec<SweepPoint>) -> Self {
        let best = select(&points);
        Self {
            depth,
            seed,
            rule,
            eta_star: best.map(|i| points[i].eta),
            endpoint_hit: best.is_some_and(|i| i == 0 || i + 1 == points.len()),
            points,
        }
    }

    /// η*, or an error when every grid point diverged.
    pub fn require_eta_star(&self) -> Result<f64> {
        self.eta_star.ok_or(Error::AllDiverged)
    }
}

/// Seed of the initialization and batch order shared by every grid point of
/// one (seed, depth) sweep, so grid points differ only in η.
pub fn model_seed(seed: u64, depth: usize) -> u64 {
    derive_seed(seed, depth as u64)
}

/// Train one point of a sweep.
pub fn sweep_point(spec: &ArchSpec, data: &Dataset, eta: f64, budget: Budget, rule: SelectionRule, seed: u64) -> Result<SweepPoint> {
    let start = Instant::now();
    let out = train(spec, data, eta, budget, seed)?;
    let metric = match rule {
        SelectionRule::ValAccuracy => out.val_accuracy,
        SelectionRule::ValLoss => out.initial_val_loss - out.val_loss,
    };
    let metric = if out.diverged { f64::NAN } else { metric };
    Ok(SweepPoint { eta, metric, diverged: out.diverged, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Train a fresh model per grid point for the budget and select η*.
pub fn sweep(spec: &ArchSpec, grid: &SweepGrid, data: &Dataset, budget: Budget, rule: SelectionRule, seed: u64) -> Result<SweepResult> {
    use rayon::prelude::*;
    let points = grid
        .etas()
        .par_iter()
        .map(|&eta| sweep_point(spec, data, eta, budget, rule, model_seed(seed, spec.depth)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::from_points(spec.depth, seed, rule, points))
}

/// η = probe_η / √S̄(probe_η): the S̄ = 1 solution under quadratic scaling.
pub fn closed_form_calibration(probe_eta: f64, sbar: f64) -> Result<f64> {
    if !(sbar > 0.0) || !sbar.is_finite() {
        return Err(Error::Invalid(format!("S̄ at the probe learning rate must be positive and finite, got {sbar}")));
    }
    if !(probe_eta > 0.0) {
        return Err(Error::Invalid("probe learning rate must be positive".into()));
    }
    Ok(probe_eta / sbar.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub eta: f64,
    pub closed_form: f64,
    pub sbar_at_probe: f64,
    pub sbar_at_eta: f64,
    /// (η, S̄) of every probe evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
    pub refined: bool,
}

/// Tolerance |S̄ − 1| accepted without refinement.
pub const CALIBRATION_TOLERANCE: f64 = 0.2;

/// Learning rate at which the network-mean one-step energy S̄ equals 1,
/// accepted once |S̄ − 1| ≤ 0.2.
pub fn calibrate_amup(spec: &ArchSpec, probe_eta: f64, settings: &ProbeSettings) -> Result<Calibration> {
    calibrate_amup_with(spec, probe_eta, settings, CALIBRATION_TOLERANCE)
}

/// [`calibrate_amup`] with an explicit tolerance on |S̄ − 1|.
///
/// The same replicate seeds are reused at every η so the S̄(η) curve is
/// smooth. If the closed form misses, S̄ = 1 is bracketed on log η and the
/// bracket is shrunk by false-position steps in log–log space, falling back
/// to bisection when a step makes little progress.
pub fn calibrate_amup_with(spec: &ArchSpec, probe_eta: f64, settings: &ProbeSettings, tolerance: f64) -> Result<Calibration> {
    if !(tolerance > 0.0) {
        return Err(Error::Invalid("calibration tolerance must be positive".into()));
    }
    let mut evaluations = Vec::new();
    let mut sbar_of = |eta: f64| -> Result<f64> {
        let s = match second_moments(spec, &ProbeSettings { eta, ..*settings }) {
            Ok(r) if r.diverged * 2 > r.replicates + r.diverged => f64::INFINITY,
            Ok(r) => r.sbar,
            Err(Error::Insufficient(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        evaluations.push((eta, s));
        Ok(s)
    };
    let sbar_at_probe = sbar_of(probe_eta)?;
    if !sbar_at_probe.is_finite() {
        return Err(Error::Invalid("probe learning rate diverged; choose a smaller one".into()));
    }
    let closed_form = closed_form_calibration(probe_eta, sbar_at_probe)?;
    let done = |s: f64| (s - 1.0).abs() <= tolerance;
    if done(sbar_at_probe) {
        return Ok(Calibration { eta: probe_eta, closed_form: probe_eta, sbar_at_probe, sbar_at_eta: sbar_at_probe, evaluations, refined: false });
    }
    let s0 = sbar_of(closed_form)?;
    if done(s0) {
        return Ok(Calibration { eta: closed_form, closed_form, sbar_at_probe, sbar_at_eta: s0, evaluations, refined: false });
    }
    // Bracket: S̄(lo) < 1 < S̄(hi).
    let (mut lo, mut s_lo, mut hi, mut s_hi) = if s0 > 1.0 {
        (probe_eta, sbar_at_probe, closed_form, s0)
    } else {
        (closed_form, s0, f64::NAN, f64::NAN)
    };
    if s0 < 1.0 {
        let mut eta = closed_form;
        for _ in 0..30 {
            eta *= 2.0;
            let s = sbar_of(eta)?;
            if done(s) {
                return Ok(Calibration { eta, closed_form, sbar_at_probe, sbar_at_eta: s, evaluations, refined: true });
            }
            if s > 1.0 {
                (hi, s_hi) = (eta, s);
                break;
            }
            (lo, s_lo) = (eta, s);
        }
        if hi.is_nan() {
            return Err(Error::Invalid("could not bracket S̄ = 1".into()));
        }
    }
    let mut last_side = 0i8;
    for _ in 0..60 {
        let (llo, lhi) = (lo.ln(), hi.ln());
        let mut t = 0.5;
        if s_hi.is_finite() && s_lo > 0.0 {
            let (a, b) = (s_lo.ln(), s_hi.ln());
            t = (-a / (b - a)).clamp(0.05, 0.95);
        }
        // Two steps on the same side mean false position is stalling.
        if last_side.abs() >= 2 {
            t = 0.5;
            last_side = 0;
        }
        let eta = (llo + t * (lhi - llo)).exp();
        let s = sbar_of(eta)?;
        if done(s) {
            return Ok(Calibration { eta, closed_form, sbar_at_probe, sbar_at_eta: s, evaluations, refined: true });
        }
        if s > 1.0 {
            (hi, s_hi) = (eta, s);
            last_side = if last_side > 0 { last_side + 1 } else { 1 };
        } else {
            (lo, s_lo) = (eta, s);
            last_side = if last_side < 0 { last_side - 1 } else { -1 };
        }
    }
    Err(Error::Invalid("calibration did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitKind {
    Ols,
    Wls,
}

impl FitKind {
    pub fn id(self) -> &'static str {
        match self {
            FitKind::Ols => "OLS",
            FitKind::Wls => "WLS",
        }
    }
}

/// One depth's aggregated η*: mean log10 η* over seeds and the variance of that mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPoint {
    pub depth: usize,
    pub log10_eta: f64,
    pub variance: Option<f64>,
}

/// log10 η* = intercept + slope · log10 L, with slope = −α.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub kind: FitKind,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub weights: Vec<f64>,
    /// 95% interval of the slope (t-distribution, n − 2 degrees of freedom).
    pub slope_ci: (f64, f64),
    /// Residual variance and (XᵀWX)⁻¹ entries for the confidence band.
    pub sigma2: f64,
    pub cov: [f64; 3],
    pub x_mean: f64,
    pub dof: usize,
    /// Two points: exact interpolation, no band.
    pub degenerate: bool,
}

impl PowerLawFit {
    /// Exponent α in η* ∝ L^{−α}.
    pub fn alpha(&self) -> f64 {
        -self.slope
    }

    pub fn predict_log10(&self, depth: f64) -> f64 {
        self.intercept + self.slope * depth.log10()
    }

    /// 95% half-width of the fitted line at `depth` (∞ when degenerate).
    pub fn band_half_width(&self, depth: f64) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        let x = depth.log10();
        let var = self.sigma2 * (self.cov[0] + 2.0 * x * self.cov[1] + x * x * self.cov[2]);
        t_critical(self.dof) * var.max(0.0).sqrt()
    }
}

fn t_critical(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::INFINITY)
}

/// Least-squares fit of log10 η* against log10 L.
pub fn fit_power_law(points: &[DepthPoint], kind: FitKind) -> Result<PowerLawFit> {
    let mut depths: Vec<usize> = points.iter().map(|p| p.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    if depths.len() < 2 {
        return Err(Error::Insufficient("a power-law fit needs at least two distinct depths".into()));
    }
    if points.iter().any(|p| p.depth == 0 || !p.log10_eta.is_finite()) {
        return Err(Error::Invalid("depths must be positive and log10 η* finite".into()));
    }
    let weights: Vec<f64> = match kind {
        FitKind::Ols => vec![1.0; points.len()],
        FitKind::Wls => points
            .iter()
            .map(|p| match p.variance {
                Some(v) if v > 0.0 && v.is_finite() => Ok(1.0 / v),
                _ => Err(Error::Invalid(format!("WLS needs a positive variance at depth {}", p.depth))),
            })
            .collect::<Result<_>>()?,
    };
    let xs: Vec<f64> = points.iter().map(|p| (p.depth as f64).log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.log10_eta).collect();
    let sw: f64 = weights.iter().sum();
    let xm = xs.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(&weights).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&weights).map(|(x, w)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&weights).map(|((x, y), w)| w * (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().zip(&weights).map(|(y, w)| w * (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = xs.iter().zip(&ys).zip(&weights).map(|((x, y), w)| w * (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let n = points.len();
    let degenerate = n <= 2;
    let dof = n.saturating_sub(2);
    let sigma2 = if degenerate { 0.0 } else { sse / dof as f64 };
    // (XᵀWX)⁻¹ for the design [1, x].
    let cov = [1.0 / sw + xm * xm / sxx, -xm / sxx, 1.0 / sxx];
    let slope_ci = if degenerate {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let half = t_critical(dof) * (sigma2 * cov[2]).sqrt();
        (slope - half, slope + half)
    };
    Ok(PowerLawFit { kind, slope, intercept, r2, weights, slope_ci, sigma2, cov, x_mean: xm, dof, degenerate })
}

/// Aggregate sweeps into per-depth points; a variance floor of one uniform
/// grid cell (spacing²/12 per seed) keeps weights finite when all seeds agree.
pub fn depth_points(results: &[SweepResult], grid_spacing_dex: f64) -> Vec<DepthPoint> {
    let mut depths: Vec<usize> = results.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    depths
        .into_iter()
        .filter_map(|d| {
            let logs: Vec<f64> = results.iter().filter(|r| r.depth == d).filter_map(|r| r.eta_star).map(f64::log10).collect();
            if logs.is_empty() {
                return None;
            }
            let k = logs.len() as f64;
            let floor = grid_spacing_dex.powi(2) / 12.0 / k;
            let var = (sample_variance(&logs) / k).max(floor);
            Some(DepthPoint { depth: d, log10_eta: mean(&logs), variance: Some(var) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub depth: usize,
    pub predicted: f64,
    pub measured: Option<f64>,
    /// log10(predicted / measured).
    pub error_dex: Option<f64>,
}

/// Fit a line through the anchors in log–log space and extrapolate to `targets`.
pub fn segmented_predict(anchors: &[(usize, f64)], targets: &[usize], measured: &[(usize, f64)]) -> Result<Vec<Prediction>> {
    if anchors.len() < 2 {
        return Err(Error::Insufficient("a segment needs at least two anchors".into()));
    }
    let pts: Vec<DepthPoint> = anchors
        .iter()
        .map(|&(d, e)| {
            if e > 0.0 {
                Ok(DepthPoint { depth: d, log10_eta: e.log10(), variance: None })
            } else {
                Err(Error::Invalid("anchor learning rates must be positive".into()))
            }
        })
        .collect::<Result<_>>()?;
    let fit = fit_power_law(&pts, FitKind::Ols).map_err(|e| match e {
        Error::Insufficient(_) => Error::Invalid("anchors must sit at distinct depths".into()),
        other => other,
    })?;
    Ok(targets
        .iter()
        .map(|&d| {
            let predicted = 10f64.powf(fit.predict_log10(d as f64));
            let m = measured.iter().find(|(md, _)| *md == d).map(|&(_, e)| e);
            Prediction { depth: d, predicted, measured: m, error_dex: m.map(|e| (predicted / e).log10()) }
        })
        .collect())
}

/// η*(L) = η*(L₀)·(L/L₀)^{−3/2}.
pub fn transfer(eta_star_l0: f64, l0: usize, l: usize) -> Result<f64> {
    if !(eta_star_l0 > 0.0) || l0 == 0 || l == 0 {
        return Err(Error::Invalid("transfer needs positive η and depths".into()));
    }
    Ok(eta_star_l0 * (l as f64 / l0 as f64).powf(-1.5))
}
