//! Monte-Carlo probes of one-step update energies and derivative statistics.
//!
//! A replicate is a fresh weight draw plus a fresh data draw, both keyed by
//! the replicate index so results do not depend on scheduling.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::arch::{ArchSpec, Family, Padding};
use crate::error::{Error, Result};
use crate::init::initialize;
use crate::netcore::{Direction, Loss, Model};
use crate::rng::{derive_seed, Rng};
use crate::stats::{compensated_sum, mean, mean_stderr, ratio_of_means, stderr};
use crate::tensor::Tensor;

const DATA_TAG: u64 = 0xda7a;
const DIRECTION_TAG: u64 = 0xd1;

/// Settings shared by the energy probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub eta: f64,
    pub batch: usize,
    pub replicates: usize,
    pub loss: Loss,
    /// Standard deviation of the Gaussian regression targets.
    pub sigma_y: f64,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { eta: 1e-4, batch: 1, replicates: 64, loss: Loss::Mse, sigma_y: 1.0, seed: 0 }
    }
}

/// Per-layer second moments S_ℓ = E[(Δz^ℓ)²] and their arithmetic mean S̄.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub per_layer: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sbar: f64,
    pub sbar_stderr: f64,
    /// S̄ of every non-diverged replicate, in replicate order.
    pub sbar_samples: Vec<f64>,
    /// Per-layer energies of every non-diverged replicate.
    pub rows: Vec<Vec<f64>>,
    /// Replicates that entered the moments.
    pub replicates: usize,
    /// Replicates excluded because the step produced non-finite values.
    pub diverged: usize,
    pub eta: f64,
    pub fingerprint: String,
    pub seed: u64,
}

impl ProbeReport {
    /// Aggregate per-replicate layer energies; `None` marks a diverged replicate.
    pub fn from_rows(rows: &[Option<Vec<f64>>], eta: f64, fingerprint: String, seed: u64) -> Result<Self> {
        let ok: Vec<&Vec<f64>> = rows.iter().flatten().collect();
        if ok.len() < 2 {
            return Err(Error::Insufficient(format!("{} usable replicates; at least 2 are needed", ok.len())));
        }
        let layers = ok[0].len();
        if layers == 0 || ok.iter().any(|r| r.len() != layers) {
            return Err(Error::Invalid("replicate rows must share a positive layer count".into()));
        }
        let mut per_layer = Vec::with_capacity(layers);
        let mut errs = Vec::with_capacity(layers);
        for l in 0..layers {
            let col: Vec<f64> = ok.iter().map(|r| r[l]).collect();
            let (m, s) = mean_stderr(&col);
            per_layer.push(m);
            errs.push(s);
        }
        let sbar_samples: Vec<f64> = ok.iter().map(|r| mean(r)).collect();
        Ok(Self {
            sbar: mean(&per_layer),
            sbar_stderr: stderr(&sbar_samples),
            per_layer,
            stderr: errs,
            sbar_samples,
            rows: ok.iter().map(|r| r.to_vec()).collect(),
            replicates: ok.len(),
            diverged: rows.len() - ok.len(),
            eta,
            fingerprint,
            seed,
        })
    }
}

/// Short stable hash of an architecture.
pub fn fingerprint(spec: &ArchSpec) -> String {
    let digest = Sha256::digest(format!("{spec:?}").as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Gaussian inputs and targets for the probes: N(0, σ_y²) regression targets
/// for MSE, uniformly random one-hot labels for cross-entropy.
pub fn probe_batch(spec: &ArchSpec, b: usize, loss: Loss, sigma_y: f64, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    let shape = spec.input_shape(b);
    let x = Tensor::from_vec(&shape, rng.normal_vec(shape.iter().product(), 1.0))?;
    let c = spec.outputs;
    let y = match loss {
        Loss::Mse => rng.normal_vec(b * c, sigma_y),
        Loss::CrossEntropy => {
            let mut d = vec![0.0; b * c];
            for s in 0..b {
                d[s * c + rng.below(c)] = 1.0;
            }
            d
        }
    };
    Ok((x, Tensor::from_vec(&[b, c], y)?))
}

/// Δz^ℓ for ℓ = 1..L after one SGD step, evaluated on the training batch itself.
pub fn one_step_delta(model: &Model, x: &Tensor, y: &Tensor, eta: f64, loss: Loss) -> Result<Vec<Tensor>> {
    let before = model.forward(x)?;
    let grads = model.backward(&before, y, loss)?;
    let stepped = model.sgd_step(&grads, eta)?;
    let after = stepped.forward(x).map_err(|e| match e {
        Error::NonFinite { layer, .. } => Error::NonFinite { what: "update", layer },
        other => other,
    })?;
    let mut out = Vec::with_capacity(model.spec.depth);
    for (l, (a, b)) in after.hidden().iter().zip(before.hidden()).enumerate() {
        let d = a.sub(b)?;
        if !d.is_finite() {
            return Err(Error::NonFinite { what: "update", layer: l + 1 });
        }
        out.push(d);
    }
    Ok(out)
}

/// Per-layer mean square of one replicate's update; `None` if it diverged.
fn replicate_energies(spec: &ArchSpec, s: &ProbeSettings, r: usize) -> Result<Option<Vec<f64>>> {
    let rep_seed = derive_seed(s.seed, r as u64);
    let model = initialize(spec, rep_seed)?;
    let mut rng = Rng::substream(rep_seed, DATA_TAG);
    let (x, y) = probe_batch(spec, s.batch, s.loss, s.sigma_y, &mut rng)?;
    match one_step_delta(&model, &x, &y, s.eta, s.loss) {
        Ok(d) => {
            let e: Vec<f64> = d.iter().map(Tensor::mean_sq).collect();
            Ok(e.iter().all(|v| v.is_finite()).then_some(e))
        }
        Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Monte-Carlo S_ℓ and S̄ over `settings.replicates` replicates.
pub fn second_moments(spec: &ArchSpec, settings: &ProbeSettings) -> Result<ProbeReport> {
    spec.validate()?;
    if spec.depth == 0 {
        return Err(Error::Arch("energy probes need at least one hidden layer".into()));
    }
    if settings.batch == 0 || !(settings.eta >= 0.0) {
        return Err(Error::Invalid("probe batch must be positive and eta non-negative".into()));
    }
    let rows: Vec<Option<Vec<f64>>> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| replicate_energies(spec, settings, r))
        .collect::<Result<_>>()?;
    ProbeReport::from_rows(&rows, settings.eta, fingerprint(spec), settings.seed)
}

/// T of one unit for a pair of directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TStatSample {
    pub layer: usize,
    pub value: f64,
    /// Set when a direction only touches parameters above `layer`, so the
    /// derivative vanishes identically.
    pub structurally_zero: bool,
}

/// Channel–position (and batch) average of ∂_{μ1}z · ∂_{μ2}z for every unit
/// z^0 … z^L and the output.
pub fn t_profile(model: &Model, x: &Tensor, d1: &Direction, d2: &Direction) -> Result<Vec<f64>> {
    let (_, t1) = model.jvp(x, d1)?;
    let t2 = if d1 == d2 { t1.clone() } else { model.jvp(x, d2)?.1 };
    let avg = |a: &Tensor, b: &Tensor| compensated_sum(a.data().iter().zip(b.data()).map(|(p, q)| p * q)) / a.len() as f64;
    let mut out: Vec<f64> = t1.units.iter().zip(&t2.units).map(|(a, b)| avg(a, b)).collect();
    out.push(avg(&t1.output, &t2.output));
    Ok(out)
}

fn lowest_unit(model: &Model, d: &Direction) -> Option<usize> {
    d.iter().enumerate().filter(|(_, v)| v.is_some()).map(|(i, _)| model.unit_of_param(i)).min()
}

/// T_h(μ1, μ2) on the batch `x`.
pub fn t_statistic(model: &Model, x: &Tensor, d1: &Direction, d2: &Direction, h: usize) -> Result<TStatSample> {
    if h > model.spec.depth + 1 {
        return Err(Error::Invalid(format!("layer {h} beyond the output layer {}", model.spec.depth + 1)));
    }
    let zero = [d1, d2].iter().any(|d| lowest_unit(model, d).is_none_or(|u| u > h));
    let value = if zero { 0.0 } else { t_profile(model, x, d1, d2)?[h] };
    Ok(TStatSample { layer: h, value, structurally_zero: zero })
}

/// How the two directions of a T-statistic are drawn in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionPair {
    /// μ1 = μ2, one random unit direction in parameter tensor `param`.
    Shared { param: usize },
    /// Independent random unit directions in two parameter tensors.
    Independent { first: usize, second: usize },
}

/// Per-replicate T profiles (units z^0 … z^L, then the output).
pub fn t_samples(spec: &ArchSpec, pair: DirectionPair, replicates: usize, batch: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let n_params = crate::netcore::build_ops(spec)?.len();
    let check = |p: usize| {
        if p < n_params {
            Ok(())
        } else {
            Err(Error::Invalid(format!("parameter tensor {p} does not exist")))
        }
    };
    match pair {
        DirectionPair::Shared { param } => check(param)?,
        DirectionPair::Independent { first, second } => {
            check(first)?;
            check(second)?
        }
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64);
            let model = initialize(spec, rep_seed)?;
            let mut rng = Rng::substream(rep_seed, DATA_TAG);
            let shape = spec.input_shape(batch);
            let x = Tensor::from_vec(&shape, rng.normal_vec(shape.iter().product(), 1.0))?;
            let mut drng = Rng::substream(rep_seed, DIRECTION_TAG);
            let (d1, d2) = match pair {
                DirectionPair::Shared { param } => {
                    let d = model.random_direction(param, &mut drng);
                    (d.clone(), d)
                }
                DirectionPair::Independent { first, second } => {
                    let a = model.random_direction(first, &mut drng);
                    let b = model.random_direction(second, &mut drng);
                    (a, b)
                }
            };
            t_profile(&model, &x, &d1, &d2)
        })
        .collect()
}

/// A Monte-Carlo difference with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// |value| ≤ k·stderr.
    pub fn within(&self, k: f64) -> bool {
        self.value.abs() <= k * self.stderr
    }
}

/// E[T_h] − E[T_{h−1}] from paired replicates, with μ1 = μ2 a random unit
/// direction in the first weight tensor.
pub fn invariance_gap(spec: &ArchSpec, h: usize, replicates: usize, seed: u64) -> Result<Estimate> {
    if replicates < 16 {
        return Err(Error::Insufficient(format!("invariance gap needs at least 16 replicates, got {replicates}")));
    }
    if spec.is_residual() {
        return Err(Error::Invalid("use resnet_ratio for residual networks".into()));
    }
    if h < 2 || h > spec.depth {
        return Err(Error::Invalid(format!("layer {h} outside 2..={}", spec.depth)));
    }
    let rows = t_samples(spec, DirectionPair::Shared { param: 0 }, replicates, 1, seed)?;
    let diffs: Vec<f64> = rows.iter().map(|r| r[h] - r[h - 1]).collect();
    let (value, stderr) = mean_stderr(&diffs);
    Ok(Estimate { value, stderr })
}

/// Mean and standard error of E[T_h] for each h = 1..=L, plus all paired gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceProfile {
    pub means: Vec<Estimate>,
    /// gaps[h − 2] = E[T_h] − E[T_{h−1}] for h = 2..=L.
    pub gaps: Vec<Estimate>,
}

pub fn invariance_profile(spec: &ArchSpec, replicates: usize, seed: u64) -> Result<InvarianceProfile> {
    if replicates < 16 {
        return Err(Error::Insufficient(format!("invariance profile needs at least 16 replicates, got {replicates}")));
    }
    let rows = t_samples(spec, DirectionPair::Shared { param: 0 }, replicates, 1, seed)?;
    let depth = spec.depth;
    let est = |v: Vec<f64>| {
        let (value, stderr) = mean_stderr(&v);
        Estimate { value, stderr }
    };
    let means = (1..=depth).map(|h| est(rows.iter().map(|r| r[h]).collect())).collect();
    let gaps = (2..=depth).map(|h| est(rows.iter().map(|r| r[h] - r[h - 1]).collect())).collect();
    Ok(InvarianceProfile { means, gaps })
}

/// Predicted relative boundary correction of a zero-padded layer:
/// s_h/H + s_w/W (s/N in 1D).
pub fn boundary_fraction(spec: &ArchSpec, h: usize) -> Result<f64> {
    if spec.grid.is_point() {
        return Err(Error::Arch("boundary fraction needs a convolutional layer".into()));
    }
    if h == 0 || h > spec.depth {
        return Err(Error::Invalid(format!("layer {h} outside 1..={}", spec.depth)));
    }
    if spec.padding == Padding::Circular {
        return Ok(0.0);
    }
    let (sh, sw) = spec.kernels[h - 1].half_spans();
    let g = spec.grid;
    let part = |s: usize, n: usize| if n > 1 { s as f64 / n as f64 } else { 0.0 };
    Ok(part(sh, g.height) + part(sw, g.width))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryDeviation {
    /// Mean relative per-layer gap (E[T_h] − E[T_1]) / ((h − 1)·E[T_1]).
    pub measured: Estimate,
    pub predicted_fraction: f64,
}

/// Relative invariance gap of a zero-padded CNN averaged over transitions 2..=h.
/// For circular padding the prediction is 0 and the measurement is the noise floor.
pub fn boundary_deviation(spec: &ArchSpec, h: usize, replicates: usize, seed: u64) -> Result<BoundaryDeviation> {
    let predicted_fraction = boundary_fraction(spec, h.max(1))?;
    if replicates < 16 {
        return Err(Error::Insufficient(format!("boundary deviation needs at least 16 replicates, got {replicates}")));
    }
    if h < 2 || h > spec.depth || spec.is_residual() {
        return Err(Error::Invalid(format!("layer {h} outside 2..={} of a plain CNN", spec.depth)));
    }
    let rows = t_samples(spec, DirectionPair::Shared { param: 0 }, replicates, 1, seed)?;
    let top: Vec<f64> = rows.iter().map(|r| (r[h] - r[1]) / (h - 1) as f64).collect();
    let base: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let (value, stderr) = ratio_of_means(&top, &base);
    Ok(BoundaryDeviation { measured: Estimate { value, stderr }, predicted_fraction })
}

/// E[T_h]/E[T_{h−1}] for a residual network, directions in the stem.
pub fn resnet_ratio(spec: &ArchSpec, h: usize, replicates: usize, seed: u64) -> Result<Estimate> {
    resnet_span_ratio(spec, h - 1, h, replicates, seed)
}

/// E[T_hi]/E[T_lo] for a residual network; `(0, K)` gives the cumulative product.
pub fn resnet_span_ratio(spec: &ArchSpec, lo: usize, hi: usize, replicates: usize, seed: u64) -> Result<Estimate> {
    if spec.family != Family::ResNet {
        return Err(Error::Invalid("resnet_ratio needs a residual spec".into()));
    }
    if lo >= hi || hi > spec.depth {
        return Err(Error::Invalid(format!("need 0 <= lo < hi <= {}", spec.depth)));
    }
    let rows = t_samples(spec, DirectionPair::Shared { param: 0 }, replicates, 1, seed)?;
    let a: Vec<f64> = rows.iter().map(|r| r[hi]).collect();
    let b: Vec<f64> = rows.iter().map(|r| r[lo]).collect();
    let (mb, sb) = mean_stderr(&b);
    if mb.abs() <= 3.0 * sb {
        return Err(Error::Insufficient("E[T] of the lower block is indistinguishable from 0".into()));
    }
    let (value, stderr) = ratio_of_means(&a, &b);
    Ok(Estimate { value, stderr })
}

/// E[T_L(μ1, μ2)²] with independent random unit directions in layers h1 and h2,
/// counted downward from the probed layer (h = 1 is the last hidden operator).
pub fn empirical_min_structure(spec: &ArchSpec, h1: usize, h2: usize, replicates: usize, seed: u64) -> Result<Estimate> {
    if replicates < 16 {
        return Err(Error::Insufficient(format!("min structure needs at least 16 replicates, got {replicates}")));
    }
    if spec.is_residual() || h1 == 0 || h2 == 0 || h1.max(h2) > spec.depth {
        return Err(Error::Invalid(format!("units ({h1}, {h2}) must lie in 1..={} of a plain network", spec.depth)));
    }
    let rows = t_samples(spec, DirectionPair::Independent { first: spec.depth - h1, second: spec.depth - h2 }, replicates, 1, seed)?;
    let sq: Vec<f64> = rows.iter().map(|r| r[spec.depth].powi(2)).collect();
    let (value, stderr) = mean_stderr(&sq);
    Ok(Estimate { value, stderr })
}

/// The matrix min(h1, h2) for h1, h2 ∈ 1..=ℓ and its entry sum.
pub fn min_overlap_check(ell: usize) -> Result<(Vec<Vec<u64>>, u64)> {
    if ell == 0 {
        return Err(Error::Invalid("ℓ must be at least 1".into()));
    }
    let m: Vec<Vec<u64>> = (1..=ell as u64).map(|a| (1..=ell as u64).map(|b| a.min(b)).collect()).collect();
    let sum = m.iter().flatten().sum();
    Ok((m, sum))
}

/// ℓ(ℓ+1)(2ℓ+1)/6.
pub fn min_overlap_closed_form(ell: u64) -> u64 {
    ell * (ell + 1) * (2 * ell + 1) / 6
}

/// Squared norm of the cross-entropy logit gradient at zero logits: analytic
/// 1 − 1/C and the value computed through the loss.
pub fn ce_gradient_norm(classes: usize) -> Result<(f64, f64)> {
    if classes < 2 {
        return Err(Error::Invalid("at least two classes are needed".into()));
    }
    let analytic = 1.0 - 1.0 / classes as f64;
    let z = Tensor::zeros(&[1, classes]);
    let mut y = Tensor::zeros(&[1, classes]);
    y.data_mut()[0] = 1.0;
    let (_, g) = Loss::CrossEntropy.value_and_grad(&z, &y)?;
    Ok((analytic, g.sum_sq()))
}
