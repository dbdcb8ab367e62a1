//! Initialization variance policies and the activation gate moment.

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::arch::{Activation, ArchSpec, Readout};
use crate::error::{Error, Result};
use crate::netcore::{build_ops, LinearOp, Model};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    HeDense,
    HeConv,
    ResidualScaled,
    /// Output head with variance 2/fan_in², keeping the network output
    /// O(1/√width) at initialization.
    MupReadout,
}

/// The variance used for one parameter tensor and how it was derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitPolicy {
    pub kind: InitKind,
    pub variance: f64,
    pub fan_in: usize,
    /// Block count K; ResidualScaled only.
    pub blocks: Option<usize>,
    /// Constant c; ResidualScaled only.
    pub c: Option<f64>,
    pub gate_adjustment: f64,
}

impl InitPolicy {
    pub fn he_dense(fan_in: usize, gate_adjustment: f64) -> Result<Self> {
        let variance = gate_adjustment * he_fan_in(fan_in)?;
        Ok(Self { kind: InitKind::HeDense, variance, fan_in, blocks: None, c: None, gate_adjustment })
    }

    pub fn he_conv(c_in: usize, k: usize, gate_adjustment: f64) -> Result<Self> {
        let fan_in = c_in * k;
        let variance = gate_adjustment * he_fan_in(fan_in)?;
        Ok(Self { kind: InitKind::HeConv, variance, fan_in, blocks: None, c: None, gate_adjustment })
    }

    pub fn residual(blocks: usize, fan_in: usize, c: f64) -> Result<Self> {
        let variance = residual_variance(blocks, fan_in, c)?;
        Ok(Self { kind: InitKind::ResidualScaled, variance, fan_in, blocks: Some(blocks), c: Some(c), gate_adjustment: 1.0 })
    }

    pub fn mup_readout(fan_in: usize, gate_adjustment: f64) -> Result<Self> {
        let variance = gate_adjustment * he_fan_in(fan_in)? / fan_in as f64;
        Ok(Self { kind: InitKind::MupReadout, variance, fan_in, blocks: None, c: None, gate_adjustment })
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn he_fan_in(fan_in: usize) -> Result<f64> {
    if fan_in == 0 {
        return Err(Error::Invalid("fan-in must be positive".into()));
    }
    Ok(2.0 / fan_in as f64)
}

/// He variance 2/fan_in of a linear op; for convolutions fan_in = C_in·|K|.
pub fn he_variance(op: &LinearOp) -> Result<f64> {
    he_fan_in(op.fan_in())
}

/// c/(K·fan_in).
pub fn residual_variance(blocks: usize, fan_in: usize, c: f64) -> Result<f64> {
    if blocks == 0 || fan_in == 0 || !(c > 0.0) || !c.is_finite() {
        return Err(Error::Invalid(format!("residual variance needs K, fan_in, c > 0 (got {blocks}, {fan_in}, {c})")));
    }
    Ok(c / (blocks as f64 * fan_in as f64))
}

/// Variance multiplier compensating for the activation's gate moment.
pub fn gate_adjustment(act: Activation) -> f64 {
    match act {
        Activation::Gelu => std::f64::consts::SQRT_2,
        Activation::Relu | Activation::Identity => 1.0,
    }
}

/// Gauss–Hermite nodes and weights for ∫ e^{-x²} f(x) dx (Golub–Welsch),
/// nodes in increasing order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let Some(n) = NonZeroUsize::new(n) else {
        return (Vec::new(), Vec::new());
    };
    GaussHermite::new(n).into_node_weight_pairs().iter().copied().unzip()
}

/// E[f(z)] for z ~ N(0, 1) by n-point Gauss–Hermite quadrature.
pub fn gaussian_expectation(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(n);
    // Sum mirrored node pairs together so that odd/even symmetries are exact.
    let (mut s, mut total) = (0.0, 0.0);
    for i in 0..n / 2 {
        let z = std::f64::consts::SQRT_2 * x[i];
        s += w[i] * (f(z) + f(-z));
        total += 2.0 * w[i];
    }
    if n % 2 == 1 {
        s += w[n / 2] * f(0.0);
        total += w[n / 2];
    }
    s / total
}

/// Gate moment q = E[σ′(z)²], z ~ N(0, 1).
pub fn gate_moment(act: Activation, n_quadrature: usize) -> Result<f64> {
    if n_quadrature < 64 {
        return Err(Error::Invalid(format!("gate moment needs at least 64 quadrature nodes, got {n_quadrature}")));
    }
    Ok(gaussian_expectation(n_quadrature, |z| act.derivative(z).powi(2)))
}

/// Policy of every parameter tensor of `spec`, in parameter order.
pub fn policies(spec: &ArchSpec) -> Result<Vec<InitPolicy>> {
    let ops = build_ops(spec)?;
    let adj = gate_adjustment(spec.activation);
    let head = ops.len() - 1;
    let he = |op: &LinearOp, a: f64| match op {
        LinearOp::Dense { fan_in, .. } => InitPolicy::he_dense(*fan_in, a),
        LinearOp::Conv { c_in, kernel, .. } => InitPolicy::he_conv(*c_in, kernel.len(), a),
    };
    ops.iter()
        .enumerate()
        .map(|(i, op)| {
            if i == head {
                let a = if spec.gelu_adjust_head { adj } else { 1.0 };
                return match spec.readout {
                    Readout::He => InitPolicy::he_dense(op.fan_in(), a),
                    Readout::MuP => InitPolicy::mup_readout(op.fan_in(), a),
                };
            }
            match spec.residual {
                Some(r) if i > 0 => InitPolicy::residual(spec.blocks(), op.fan_in(), r.c),
                _ => he(op, adj),
            }
        })
        .collect()
}

/// Draw every weight i.i.d. N(0, policy variance); tensor i uses sub-stream i of `seed`.
pub fn initialize(spec: &ArchSpec, seed: u64) -> Result<Model> {
    let ops = build_ops(spec)?;
    let pols = policies(spec)?;
    let mut params = Vec::with_capacity(ops.len());
    for (i, (op, pol)) in ops.iter().zip(&pols).enumerate() {
        let shape = op.weight_shape();
        let n = shape.iter().product();
        let mut rng = Rng::substream(seed, i as u64);
        params.push(Tensor::from_vec(&shape, rng.normal_vec(n, pol.std()))?);
    }
    let mut model = Model::from_params(spec.clone(), params, seed)?;
    model.policies = pols;
    Ok(model)
}

/// Kolmogorov–Smirnov statistic of `sample` against N(0, 1).
pub fn ks_statistic_normal(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = crate::netcore::activation::normal_cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS statistic `d` from `n` samples.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        // The alternating series has not settled here; Q(0.2) = 1 − O(1e-10).
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
