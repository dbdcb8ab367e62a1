//! Linear maps on spatial grids with hand-written adjoints.
//!
//! Activations are stored channel-major per sample: `[batch][channel][position]`
//! with positions in row-major grid order.

use crate::arch::{Grid, Kernel, Padding};
use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub enum LinearOp {
    Dense { fan_in: usize, fan_out: usize },
    Conv { c_in: usize, c_out: usize, kernel: Kernel, grid: Grid, padding: Padding },
}

/// Source position for output position `p` under `offset`, if any.
#[inline]
pub fn shifted(grid: Grid, padding: Padding, p: usize, offset: (i32, i32)) -> Option<usize> {
    let (h, w) = (grid.height as i64, grid.width as i64);
    let r = (p / grid.width) as i64 + offset.0 as i64;
    let c = (p % grid.width) as i64 + offset.1 as i64;
    match padding {
        Padding::Circular => Some((r.rem_euclid(h) * w + c.rem_euclid(w)) as usize),
        Padding::Zero if r >= 0 && r < h && c >= 0 && c < w => Some((r * w + c) as usize),
        Padding::Zero => None,
    }
}

/// `out[i] = a[i] · bᵀ` style GEMM wrapper: C(m×n) = alpha·A(m×k)·B(k×n) + beta·C.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided ranges.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
    }
}

impl LinearOp {
    pub fn fan_in(&self) -> usize {
        match self {
            LinearOp::Dense { fan_in, .. } => *fan_in,
            LinearOp::Conv { c_in, kernel, .. } => c_in * kernel.len(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            LinearOp::Dense { fan_in, .. } => *fan_in,
            LinearOp::Conv { c_in, .. } => *c_in,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            LinearOp::Dense { fan_out, .. } => *fan_out,
            LinearOp::Conv { c_out, .. } => *c_out,
        }
    }

    pub fn positions(&self) -> usize {
        match self {
            LinearOp::Dense { .. } => 1,
            LinearOp::Conv { grid, .. } => grid.size(),
        }
    }

    /// Weight tensor shape: `[out, in]` or `[c_out, c_in, k]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self {
            LinearOp::Dense { fan_in, fan_out } => vec![*fan_out, *fan_in],
            LinearOp::Conv { c_in, c_out, kernel, .. } => vec![*c_out, *c_in, kernel.len()],
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_channels() * self.positions()
    }

    pub fn out_len(&self) -> usize {
        self.out_channels() * self.positions()
    }

    /// im2col for one sample: rows (i, Δ), columns p.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        if let LinearOp::Conv { c_in, kernel, grid, padding, .. } = self {
            let np = grid.size();
            let k = kernel.len();
            for (d, &off) in kernel.offsets().iter().enumerate() {
                for p in 0..np {
                    let src = shifted(*grid, *padding, p, off);
                    for i in 0..*c_in {
                        col[(i * k + d) * np + p] = src.map_or(0.0, |q| x[i * np + q]);
                    }
                }
            }
        }
    }

    /// Adjoint of im2col: scatter-add columns back into an input-shaped buffer.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        if let LinearOp::Conv { c_in, kernel, grid, padding, .. } = self {
            let np = grid.size();
            let k = kernel.len();
            for (d, &off) in kernel.offsets().iter().enumerate() {
                for p in 0..np {
                    if let Some(q) = shifted(*grid, *padding, p, off) {
                        for i in 0..*c_in {
                            dx[i * np + q] += col[(i * k + d) * np + p];
                        }
                    }
                }
            }
        }
    }

    /// y = W ⋆ x for a batch of `b` samples.
    pub fn forward(&self, w: &[f64], x: &[f64], b: usize) -> Vec<f64> {
        let mut y = vec![0.0; b * self.out_len()];
        match self {
            LinearOp::Dense { fan_in, fan_out } => {
                let (fi, fo) = (*fan_in as isize, *fan_out as isize);
                gemm(b, *fan_in, *fan_out, x, (fi, 1), w, (1, fi), &mut y, (fo, 1), 0.0);
            }
            LinearOp::Conv { c_out, .. } => {
                let (np, kk) = (self.positions(), self.fan_in());
                let mut col = vec![0.0; kk * np];
                for s in 0..b {
                    self.im2col(&x[s * self.in_len()..(s + 1) * self.in_len()], &mut col);
                    let ys = &mut y[s * c_out * np..(s + 1) * c_out * np];
                    gemm(*c_out, kk, np, w, (kk as isize, 1), &col, (np as isize, 1), ys, (np as isize, 1), 0.0);
                }
            }
        }
        y
    }

    /// dx = Wᵀ ⋆ dy.
    pub fn backward_input(&self, w: &[f64], dy: &[f64], b: usize) -> Vec<f64> {
        let mut dx = vec![0.0; b * self.in_len()];
        match self {
            LinearOp::Dense { fan_in, fan_out } => {
                let (fi, fo) = (*fan_in as isize, *fan_out as isize);
                gemm(b, *fan_out, *fan_in, dy, (fo, 1), w, (fi, 1), &mut dx, (fi, 1), 0.0);
            }
            LinearOp::Conv { c_out, .. } => {
                let (np, kk) = (self.positions(), self.fan_in());
                let mut col = vec![0.0; kk * np];
                for s in 0..b {
                    let dys = &dy[s * c_out * np..(s + 1) * c_out * np];
                    gemm(kk, *c_out, np, w, (1, kk as isize), dys, (np as isize, 1), &mut col, (np as isize, 1), 0.0);
                    self.col2im(&col, &mut dx[s * self.in_len()..(s + 1) * self.in_len()]);
                }
            }
        }
        dx
    }

    /// dW += dy ⊗ x summed over the batch.
    pub fn weight_grad(&self, x: &[f64], dy: &[f64], b: usize, dw: &mut [f64]) {
        match self {
            LinearOp::Dense { fan_in, fan_out } => {
                let (fi, fo) = (*fan_in as isize, *fan_out as isize);
                gemm(*fan_out, b, *fan_in, dy, (1, fo), x, (fi, 1), dw, (fi, 1), 1.0);
            }
            LinearOp::Conv { c_out, .. } => {
                let (np, kk) = (self.positions(), self.fan_in());
                let mut col = vec![0.0; kk * np];
                for s in 0..b {
                    self.im2col(&x[s * self.in_len()..(s + 1) * self.in_len()], &mut col);
                    let dys = &dy[s * c_out * np..(s + 1) * c_out * np];
                    gemm(*c_out, np, kk, dys, (np as isize, 1), &col, (1, np as isize), dw, (kk as isize, 1), 1.0);
                }
            }
        }
    }
}
