//! Initialization variances, gate moments and a normality check of drawn weights.

use amup::init::{gate_adjustment, gate_moment, initialize, ks_pvalue, ks_statistic_normal, policies};
use amup::{Activation, ArchSpec, Grid};

fn main() -> amup::Result<()> {
    for act in [Activation::Relu, Activation::Gelu, Activation::Identity] {
        let q = gate_moment(act, 128)?;
        println!("{act:?}: E[σ'(z)²] = {q:.6}, variance multiplier {:.4}", gate_adjustment(act));
    }

    let specs = [
        ("mlp", ArchSpec::mlp(32, 128, 3, 10)),
        ("cnn2d", ArchSpec::cnn2d(64, Grid::plane(4, 4), 64, 2, (3, 3), 10)),
        ("resnet", ArchSpec::resnet_dense(16, 128, 10, 10).with_residual(1, 2.0)),
    ];
    for (name, spec) in specs {
        let model = initialize(&spec, 7)?;
        println!("\n{name}");
        for ((p, pol), w) in policies(&spec)?.iter().enumerate().zip(&model.params) {
            let z: Vec<f64> = w.data().iter().map(|x| x / pol.std()).collect();
            let pv = ks_pvalue(ks_statistic_normal(&z), z.len());
            println!("  tensor {p:<2} {:<15} fan_in {:<4} var {:.6}  KS p {:.3}", format!("{:?}", pol.kind), pol.fan_in, pol.variance, pv);
        }
    }
    Ok(())
}
