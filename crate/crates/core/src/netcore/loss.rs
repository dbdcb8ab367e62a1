use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    /// (1/B) Σ ½‖z − y‖²
    Mse,
    /// (1/B) Σ −Σ_c y_c log softmax(z)_c with one-hot (or probability) targets.
    CrossEntropy,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Loss {
    /// Loss value and its gradient with respect to the outputs.
    pub fn value_and_grad(self, output: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
        if output.shape() != targets.shape() {
            return Err(Error::Shape { expected: output.shape().to_vec(), got: targets.shape().to_vec() });
        }
        let b = output.rows();
        let width = output.len() / b;
        let inv_b = 1.0 / b as f64;
        let mut grad = Tensor::zeros(output.shape());
        let mut total = 0.0;
        for s in 0..b {
            let z = &output.data()[s * width..(s + 1) * width];
            let y = &targets.data()[s * width..(s + 1) * width];
            let g = &mut grad.data_mut()[s * width..(s + 1) * width];
            match self {
                Loss::Mse => {
                    for c in 0..width {
                        let r = z[c] - y[c];
                        total += 0.5 * r * r;
                        g[c] = r * inv_b;
                    }
                }
                Loss::CrossEntropy => {
                    let p = softmax(z);
                    for c in 0..width {
                        if y[c] != 0.0 {
                            total -= y[c] * p[c].max(f64::MIN_POSITIVE).ln();
                        }
                        g[c] = (p[c] - y[c]) * inv_b;
                    }
                }
            }
        }
        Ok((total * inv_b, grad))
    }
}
