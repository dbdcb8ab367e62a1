use amup::init::{gate_moment, initialize, ks_pvalue, ks_statistic_normal, policies, InitKind};
use amup::stats::sample_variance;
use amup::{Activation, ArchSpec, Grid};

fn variance_within(sample: &[f64], target: f64, k: f64) -> (bool, f64) {
    let n = sample.len() as f64;
    let v = sample_variance(sample);
    let se = target * (2.0 / (n - 1.0)).sqrt();
    ((v - target).abs() <= k * se, (v - target) / se)
}

#[test]
fn conv_tensor_variance_matches_he() {
    let spec = ArchSpec::cnn2d(64, Grid::plane(4, 4), 64, 2, (3, 3), 10);
    let model = initialize(&spec, 21).unwrap();
    let w = model.params[1].data();
    assert_eq!(w.len(), 64 * 576);
    let (ok, z) = variance_within(w, 2.0 / 576.0, 5.0);
    assert!(ok, "z = {z:.2}");
}

#[test]
fn residual_branch_variance_matches_policy() {
    let spec = ArchSpec::resnet_dense(16, 128, 10, 10).with_residual(1, 2.0);
    let model = initialize(&spec, 8).unwrap();
    let branch: Vec<f64> = model.params[1..11].iter().flat_map(|p| p.data().to_vec()).collect();
    let (ok, z) = variance_within(&branch, 2.0 / (10.0 * 128.0), 5.0);
    assert!(ok, "z = {z:.2}");
    assert!(model.policies[1..11].iter().all(|p| p.kind == InitKind::ResidualScaled));
}

#[test]
fn standardized_weights_pass_normality_test() {
    let spec = ArchSpec::mlp(128, 256, 3, 10);
    let model = initialize(&spec, 13).unwrap();
    for (p, pol) in model.params.iter().zip(&model.policies) {
        if p.len() < 10_000 {
            continue;
        }
        let z: Vec<f64> = p.data().iter().map(|w| w / pol.std()).collect();
        let pv = ks_pvalue(ks_statistic_normal(&z), z.len());
        assert!(pv > 1e-3, "{:?}: p = {pv:e}", pol.kind);
    }
}

#[test]
fn same_seed_same_model() {
    let spec = ArchSpec::cnn1d(3, 16, 8, 4, 5, 4);
    let (a, b) = (initialize(&spec, 99).unwrap(), initialize(&spec, 99).unwrap());
    for (p, q) in a.params.iter().zip(&b.params) {
        assert!(p.data().iter().zip(q.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_ne!(initialize(&spec, 100).unwrap().params, a.params);
}

#[test]
fn gate_moment_converges_in_quadrature_order() {
    for act in [Activation::Relu, Activation::Gelu, Activation::Identity] {
        for n in [128, 256] {
            let (a, b) = (gate_moment(act, n).unwrap(), gate_moment(act, 2 * n).unwrap());
            assert!((a - b).abs() < 1e-10, "{act:?} at {n} nodes: {a} vs {b}");
        }
    }
}

#[test]
fn gelu_gate_factor_near_unit_jacobian() {
    let chi = 2.0 * gate_moment(Activation::Gelu, 256).unwrap();
    assert!((chi - 0.912).abs() < 2e-3, "{chi}");
    assert!((chi - 1.0).abs() <= 0.1);
}

#[test]
fn gelu_multiplier_skips_the_head_by_default() {
    let spec = ArchSpec::mlp(8, 32, 2, 4).with_activation(Activation::Gelu);
    let pols = policies(&spec).unwrap();
    let relu = policies(&ArchSpec::mlp(8, 32, 2, 4)).unwrap();
    for (g, r) in pols.iter().zip(&relu).take(2) {
        assert!((g.variance / r.variance - std::f64::consts::SQRT_2).abs() < 1e-12);
    }
    assert_eq!(pols[2].variance, relu[2].variance);
}
