#![allow(dead_code)]

use amup::init::initialize;
use amup::rng::Rng;
use amup::{ArchSpec, Loss, Model, Tensor};

pub fn random_batch(spec: &ArchSpec, b: usize, rng: &mut Rng) -> Tensor {
    let shape = spec.input_shape(b);
    let n = shape.iter().product();
    Tensor::from_vec(&shape, rng.normal_vec(n, 1.0)).unwrap()
}

pub fn random_targets(spec: &ArchSpec, b: usize, loss: Loss, rng: &mut Rng) -> Tensor {
    let c = spec.outputs;
    let data = match loss {
        Loss::Mse => rng.normal_vec(b * c, 1.0),
        Loss::CrossEntropy => {
            let mut d = vec![0.0; b * c];
            for s in 0..b {
                d[s * c + rng.below(c)] = 1.0;
            }
            d
        }
    };
    Tensor::from_vec(&[b, c], data).unwrap()
}

fn loss_at(model: &Model, x: &Tensor, y: &Tensor, loss: Loss) -> f64 {
    let t = model.forward(x).unwrap();
    loss.value_and_grad(&t.output, y).unwrap().0
}

/// Largest relative error between backward gradients and central differences
/// (step 1e-5) over `coords` random coordinates.
pub fn max_fd_error(spec: &ArchSpec, seed: u64, loss: Loss, coords: usize) -> f64 {
    let mut rng = Rng::new(seed ^ 0xfd);
    let model = initialize(spec, seed).unwrap();
    let x = random_batch(spec, 3, &mut rng);
    let y = random_targets(spec, 3, loss, &mut rng);
    let trace = model.forward(&x).unwrap();
    let grads = model.backward(&trace, &y, loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let t = rng.below(model.params.len());
        let i = rng.below(model.params[t].len());
        let mut plus = model.clone();
        plus.params[t].data_mut()[i] += h;
        let mut minus = model.clone();
        minus.params[t].data_mut()[i] -= h;
        let fd = (loss_at(&plus, &x, &y, loss) - loss_at(&minus, &x, &y, loss)) / (2.0 * h);
        let g = grads.grads[t].data()[i];
        let scale = g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((g - fd).abs() / scale);
    }
    worst
}

/// Every layer type the engine supports, small enough for finite differences.
pub fn gradient_zoo() -> Vec<(&'static str, ArchSpec)> {
    use amup::{Activation, Grid, Padding, Readout};
    vec![
        ("linear head only", ArchSpec::mlp(4, 4, 0, 3)),
        ("dense relu", ArchSpec::mlp(5, 7, 3, 3)),
        ("dense gelu", ArchSpec::mlp(5, 7, 3, 3).with_activation(Activation::Gelu)),
        ("dense mup head", ArchSpec::mlp(5, 7, 2, 3).with_readout(Readout::MuP)),
        ("conv1d circular", ArchSpec::cnn1d(2, 6, 3, 3, 3, 2)),
        ("conv1d zero", ArchSpec::cnn1d(2, 6, 3, 3, 3, 2).with_padding(Padding::Zero)),
        ("conv2d circular", ArchSpec::cnn2d(2, Grid::plane(3, 4), 3, 2, (3, 3), 2)),
        ("conv2d zero", ArchSpec::cnn2d(2, Grid::plane(3, 4), 3, 2, (3, 2), 2).with_padding(Padding::Zero)),
        ("residual dense", ArchSpec::resnet_dense(4, 5, 3, 2)),
        ("residual dense m=2", ArchSpec::resnet_dense(4, 5, 2, 2).with_residual(2, 2.0)),
        ("residual conv1d", ArchSpec::resnet_conv1d(2, 5, 3, 2, 3, 2).with_activation(Activation::Gelu)),
    ]
}
