//! Tensor and layer engine: forward, reverse-mode backward, forward-mode JVP
//! and plain SGD for every architecture family.
//!
//! A plain network of depth L is `op_0, …, op_{L-1}, head`. Unit ℓ is the
//! pre-activation z^ℓ = op_{ℓ-1}(σ(z^{ℓ-1})) with z^0 = x fed in without an
//! activation. A residual network is `stem, branch ops of block 1, …, block K,
//! head`; z^0 is the stem output and z^ℓ = z^{ℓ-1} + F_ℓ(σ(z^{ℓ-1})), where the
//! branch F_ℓ is m linear maps with σ between them. The head is dense on the
//! globally average-pooled σ(z^L).

pub mod activation;
pub mod loss;
pub mod ops;

use std::ops::Range;

use crate::arch::{Activation, ArchSpec, Grid, Padding};
use crate::error::{Error, Result};
use crate::init::InitPolicy;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use loss::Loss;
pub use ops::LinearOp;

/// Initialized parameters plus the metadata that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ArchSpec,
    pub params: Vec<Tensor>,
    pub seed: u64,
    pub policies: Vec<InitPolicy>,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// z^0 … z^L. For plain networks z^0 is the input batch.
    pub units: Vec<Tensor>,
    /// Output z^{L+1}, shape `[batch, outputs]`.
    pub output: Tensor,
    batch: usize,
    /// Input fed to each op (already activated where applicable).
    op_inputs: Vec<Vec<f64>>,
    /// Raw output of each non-head op.
    op_outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// z^1 … z^L.
    pub fn hidden(&self) -> &[Tensor] {
        &self.units[1..]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
    pub loss: f64,
}

/// Tangent of every unit and of the output along a parameter direction.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub units: Vec<Tensor>,
    pub output: Tensor,
}

/// A direction in parameter space; `None` entries are zero.
pub type Direction = Vec<Option<Vec<f64>>>;

/// The linear maps of a spec in parameter order, head last.
pub fn build_ops(spec: &ArchSpec) -> Result<Vec<LinearOp>> {
    spec.validate()?;
    let conv = |c_in: usize, c_out: usize, unit: usize| -> LinearOp {
        if spec.grid.is_point() {
            LinearOp::Dense { fan_in: c_in, fan_out: c_out }
        } else {
            LinearOp::Conv {
                c_in,
                c_out,
                kernel: spec.kernels[unit].clone(),
                grid: spec.grid,
                padding: spec.padding,
            }
        }
    };
    let mut ops = Vec::new();
    let last = match spec.residual {
        None => {
            let mut c_in = spec.input_channels;
            for (u, &w) in spec.widths.iter().enumerate() {
                ops.push(conv(c_in, w, u));
                c_in = w;
            }
            c_in
        }
        Some(r) => {
            let w = spec.widths[0];
            ops.push(conv(spec.input_channels, w, 0));
            for u in 0..spec.depth {
                for _ in 0..r.branch_depth {
                    ops.push(conv(w, w, u));
                }
            }
            w
        }
    };
    ops.push(LinearOp::Dense { fan_in: last, fan_out: spec.outputs });
    Ok(ops)
}

fn finite(data: &[f64]) -> bool {
    data.iter().all(|v| v.is_finite())
}

fn map_act(act: Activation, xs: &[f64]) -> Vec<f64> {
    act.apply_vec(xs)
}

/// Global average pool `[b, c, positions]` → `[b, c]`.
fn pool(x: &[f64], b: usize, c: usize, np: usize) -> Vec<f64> {
    if np == 1 {
        return x.to_vec();
    }
    let inv = 1.0 / np as f64;
    (0..b * c).map(|r| x[r * np..(r + 1) * np].iter().sum::<f64>() * inv).collect()
}

fn unpool(d: &[f64], np: usize) -> Vec<f64> {
    if np == 1 {
        return d.to_vec();
    }
    let inv = 1.0 / np as f64;
    d.iter().flat_map(|&v| std::iter::repeat_n(v * inv, np)).collect()
}

impl Model {
    /// Wrap explicit parameters; shapes are checked against the spec.
    pub fn from_params(spec: ArchSpec, params: Vec<Tensor>, seed: u64) -> Result<Self> {
        let ops = build_ops(&spec)?;
        if ops.len() != params.len() {
            return Err(Error::Arch(format!("expected {} parameter tensors, got {}", ops.len(), params.len())));
        }
        for (op, p) in ops.iter().zip(&params) {
            if p.shape() != op.weight_shape().as_slice() {
                return Err(Error::Shape { expected: op.weight_shape(), got: p.shape().to_vec() });
            }
        }
        Ok(Self { spec, params, seed, policies: Vec::new() })
    }

    pub fn ops(&self) -> Vec<LinearOp> {
        build_ops(&self.spec).expect("model spec was validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn head_index(&self) -> usize {
        self.params.len() - 1
    }

    /// Parameter tensors belonging to depth unit ℓ (the stem is unit 0 of a
    /// residual network; plain networks have no unit-0 parameters).
    pub fn unit_params(&self, unit: usize) -> Range<usize> {
        match self.spec.residual {
            None if unit == 0 => 0..0,
            None => unit - 1..unit,
            Some(_) if unit == 0 => 0..1,
            Some(r) => 1 + (unit - 1) * r.branch_depth..1 + unit * r.branch_depth,
        }
    }

    /// Depth unit owning parameter tensor `index` (`depth + 1` for the head).
    pub fn unit_of_param(&self, index: usize) -> usize {
        if index == self.head_index() {
            return self.spec.depth + 1;
        }
        match self.spec.residual {
            None => index + 1,
            Some(_) if index == 0 => 0,
            Some(r) => 1 + (index - 1) / r.branch_depth,
        }
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ForwardTrace> {
        self.evaluate(batch, None).map(|(t, _)| t)
    }

    /// Forward pass together with the directional derivative of every unit.
    pub fn jvp(&self, batch: &Tensor, dir: &[Option<Vec<f64>>]) -> Result<(ForwardTrace, Tangent)> {
        if dir.len() != self.params.len() {
            return Err(Error::Invalid(format!("direction has {} entries, model has {}", dir.len(), self.params.len())));
        }
        for (d, p) in dir.iter().zip(&self.params) {
            if let Some(v) = d {
                if v.len() != p.len() {
                    return Err(Error::Shape { expected: p.shape().to_vec(), got: vec![v.len()] });
                }
            }
        }
        self.evaluate(batch, Some(dir)).map(|(t, g)| (t, g.expect("tangent requested")))
    }

    fn evaluate(&self, batch: &Tensor, dir: Option<&[Option<Vec<f64>>]>) -> Result<(ForwardTrace, Option<Tangent>)> {
        let spec = &self.spec;
        let b = batch.shape().first().copied().unwrap_or(0);
        let expected = spec.input_shape(b.max(1));
        if batch.shape() != expected.as_slice() {
            return Err(Error::Shape { expected, got: batch.shape().to_vec() });
        }
        let ops = self.ops();
        let act = spec.activation;
        let np = spec.grid.size();
        let tangent_on = dir.is_some();
        let wdir = |i: usize| dir.and_then(|d| d[i].as_deref());

        // Apply op i to (input, input tangent); returns (output, output tangent).
        let apply = |i: usize, inp: &[f64], dinp: Option<&[f64]>| -> (Vec<f64>, Option<Vec<f64>>) {
            let y = ops[i].forward(self.params[i].data(), inp, b);
            if !tangent_on {
                return (y, None);
            }
            let mut dy = match dinp {
                Some(d) => ops[i].forward(self.params[i].data(), d, b),
                None => vec![0.0; y.len()],
            };
            if let Some(v) = wdir(i) {
                let extra = ops[i].forward(v, inp, b);
                dy.iter_mut().zip(extra).for_each(|(a, e)| *a += e);
            }
            (y, Some(dy))
        };
        let activate = |z: &[f64], dz: Option<&Vec<f64>>| -> (Vec<f64>, Option<Vec<f64>>) {
            let h = map_act(act, z);
            let dh = dz.map(|d| z.iter().zip(d).map(|(&zz, &dd)| act.derivative(zz) * dd).collect());
            (h, dh)
        };
        let check = |data: &[f64], layer: usize| -> Result<()> {
            if finite(data) {
                Ok(())
            } else {
                Err(Error::NonFinite { what: "activation", layer })
            }
        };

        let mut op_inputs = Vec::with_capacity(ops.len());
        let mut op_outputs = Vec::with_capacity(ops.len());
        let mut units: Vec<Vec<f64>> = Vec::with_capacity(spec.depth + 1);
        let mut dunits: Vec<Option<Vec<f64>>> = Vec::with_capacity(spec.depth + 1);

        match spec.residual {
            None => {
                units.push(batch.data().to_vec());
                dunits.push(tangent_on.then(|| vec![0.0; batch.len()]));
                for i in 0..spec.depth {
                    let (inp, dinp) = if i == 0 {
                        (units[0].clone(), None)
                    } else {
                        activate(&units[i], dunits[i].as_ref())
                    };
                    let (z, dz) = apply(i, &inp, dinp.as_deref());
                    check(&z, i + 1)?;
                    op_inputs.push(inp);
                    op_outputs.push(z.clone());
                    units.push(z);
                    dunits.push(dz);
                }
            }
            Some(r) => {
                let (z0, dz0) = apply(0, batch.data(), None);
                check(&z0, 0)?;
                op_inputs.push(batch.data().to_vec());
                op_outputs.push(z0.clone());
                units.push(z0);
                dunits.push(dz0);
                let mut i = 1;
                for u in 1..=spec.depth {
                    let (mut t, mut dt) = activate(&units[u - 1], dunits[u - 1].as_ref());
                    let mut y = Vec::new();
                    let mut dy = None;
                    for j in 0..r.branch_depth {
                        let (yy, dyy) = apply(i, &t, dt.as_deref());
                        op_inputs.push(t);
                        op_outputs.push(yy.clone());
                        i += 1;
                        if j + 1 < r.branch_depth {
                            (t, dt) = activate(&yy, dyy.as_ref());
                        } else {
                            t = Vec::new();
                        }
                        y = yy;
                        dy = dyy;
                    }
                    let z: Vec<f64> = units[u - 1].iter().zip(&y).map(|(a, c)| a + c).collect();
                    check(&z, u)?;
                    let dz = dy.map(|d| dunits[u - 1].as_ref().unwrap().iter().zip(&d).map(|(a, c)| a + c).collect());
                    units.push(z);
                    dunits.push(dz);
                }
            }
        }

        let head = ops.len() - 1;
        let c_last = ops[head].in_channels();
        let (feat, dfeat) = if spec.depth == 0 && !spec.is_residual() {
            (units[0].clone(), dunits[0].clone())
        } else {
            activate(&units[spec.depth], dunits[spec.depth].as_ref())
        };
        let pooled = pool(&feat, b, c_last, np);
        let dpooled = dfeat.map(|d| pool(&d, b, c_last, np));
        let (out, dout) = apply(head, &pooled, dpooled.as_deref());
        check(&out, spec.depth + 1)?;
        op_inputs.push(pooled);

        let unit_shape = |u: usize| -> Vec<usize> {
            if u == 0 && !spec.is_residual() {
                spec.input_shape(b)
            } else {
                spec.activation_shape(b, spec.widths[u.max(1) - 1])
            }
        };
        let to_tensor = |u: usize, data: Vec<f64>| Tensor::from_vec(&unit_shape(u), data);
        let tangent = if tangent_on {
            let mut tu = Vec::with_capacity(dunits.len());
            for (u, d) in dunits.into_iter().enumerate() {
                tu.push(to_tensor(u, d.unwrap())?);
            }
            Some(Tangent { units: tu, output: Tensor::from_vec(&[b, spec.outputs], dout.unwrap())? })
        } else {
            None
        };
        let mut tunits = Vec::with_capacity(units.len());
        for (u, d) in units.into_iter().enumerate() {
            tunits.push(to_tensor(u, d)?);
        }
        let trace = ForwardTrace {
            units: tunits,
            output: Tensor::from_vec(&[b, spec.outputs], out)?,
            batch: b,
            op_inputs,
            op_outputs,
        };
        Ok((trace, tangent))
    }

    /// Exact reverse-mode gradients of the mean batch loss.
    pub fn backward(&self, trace: &ForwardTrace, targets: &Tensor, loss: Loss) -> Result<Gradients> {
        let (value, dout) = loss.value_and_grad(&trace.output, targets)?;
        let grads = self.backward_from_output(trace, dout.data())?;
        Ok(Gradients { grads, loss: value })
    }

    /// Pull a cotangent on the output back to every parameter.
    pub fn backward_from_output(&self, trace: &ForwardTrace, dout: &[f64]) -> Result<Vec<Tensor>> {
        let spec = &self.spec;
        let ops = self.ops();
        let b = trace.batch;
        let act = spec.activation;
        let np = spec.grid.size();
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let head = ops.len() - 1;
        if dout.len() != trace.output.len() {
            return Err(Error::Shape { expected: trace.output.shape().to_vec(), got: vec![dout.len()] });
        }

        ops[head].weight_grad(&trace.op_inputs[head], dout, b, grads[head].data_mut());
        let dpooled = ops[head].backward_input(self.params[head].data(), dout, b);
        let dfeat = unpool(&dpooled, np);
        if spec.depth == 0 && !spec.is_residual() {
            return Ok(grads);
        }
        let gate = |z: &[f64], d: &mut [f64]| {
            d.iter_mut().zip(z).for_each(|(g, &zz)| *g *= act.derivative(zz));
        };
        // Cotangent on z^L.
        let mut dz = dfeat;
        gate(trace.units[spec.depth].data(), &mut dz);

        match spec.residual {
            None => {
                for i in (0..spec.depth).rev() {
                    ops[i].weight_grad(&trace.op_inputs[i], &dz, b, grads[i].data_mut());
                    if i == 0 {
                        break;
                    }
                    let mut dprev = ops[i].backward_input(self.params[i].data(), &dz, b);
                    gate(trace.units[i].data(), &mut dprev);
                    dz = dprev;
                }
            }
            Some(r) => {
                let m = r.branch_depth;
                for u in (1..=spec.depth).rev() {
                    // dz is the cotangent of z^u; it flows to z^{u-1} through the skip and the branch.
                    let mut dy = dz.clone();
                    let first = 1 + (u - 1) * m;
                    for i in (first..first + m).rev() {
                        ops[i].weight_grad(&trace.op_inputs[i], &dy, b, grads[i].data_mut());
                        let mut dx = ops[i].backward_input(self.params[i].data(), &dy, b);
                        let pre = if i == first { trace.units[u - 1].data() } else { &trace.op_outputs[i - 1][..] };
                        gate(pre, &mut dx);
                        dy = dx;
                    }
                    dz.iter_mut().zip(&dy).for_each(|(a, c)| *a += c);
                }
                ops[0].weight_grad(&trace.op_inputs[0], &dz, b, grads[0].data_mut());
            }
        }
        Ok(grads)
    }

    /// One step of plain SGD, W ← W − η·g, returning the updated model.
    pub fn sgd_step(&self, grads: &Gradients, eta: f64) -> Result<Model> {
        let mut next = self.clone();
        next.sgd_step_in_place(grads, eta)?;
        Ok(next)
    }

    pub fn sgd_step_in_place(&mut self, grads: &Gradients, eta: f64) -> Result<()> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be finite and non-negative, got {eta}")));
        }
        if grads.grads.len() != self.params.len() {
            return Err(Error::Invalid("gradient list does not match parameters".into()));
        }
        for (i, g) in grads.grads.iter().enumerate() {
            if g.shape() != self.params[i].shape() {
                return Err(Error::Shape { expected: self.params[i].shape().to_vec(), got: g.shape().to_vec() });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "gradient", layer: self.unit_of_param(i) });
            }
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            p.axpy(-eta, g)?;
        }
        Ok(())
    }

    /// Direction with a Gaussian unit vector in parameter tensor `index` and zero elsewhere.
    pub fn random_direction(&self, index: usize, rng: &mut Rng) -> Direction {
        let mut dir: Direction = vec![None; self.params.len()];
        let n = self.params[index].len();
        let mut v = rng.normal_vec(n, 1.0);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        dir[index] = Some(v);
        dir
    }

    /// Direction along a single coordinate of parameter tensor `index`.
    pub fn basis_direction(&self, index: usize, coord: usize) -> Direction {
        let mut dir: Direction = vec![None; self.params.len()];
        let mut v = vec![0.0; self.params[index].len()];
        v[coord] = 1.0;
        dir[index] = Some(v);
        dir
    }
}

/// Visit count of every input site of depth unit `h`'s convolution: how many
/// (output position, kernel offset) pairs read from it.
pub fn coverage_count(spec: &ArchSpec, h: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    if spec.grid.is_point() {
        return Err(Error::Arch("coverage is defined for convolutional layers only".into()));
    }
    if h == 0 || h > spec.depth {
        return Err(Error::Invalid(format!("layer {h} outside 1..={}", spec.depth)));
    }
    Ok(kernel_coverage(spec.grid, spec.padding, spec.kernels[h - 1].offsets()))
}

pub fn kernel_coverage(grid: Grid, padding: Padding, offsets: &[(i32, i32)]) -> Vec<usize> {
    let mut counts = vec![0; grid.size()];
    for p in 0..grid.size() {
        for &off in offsets {
            if let Some(q) = ops::shifted(grid, padding, p, off) {
                counts[q] += 1;
            }
        }
    }
    counts
}
