use amup::init::initialize;
use amup::netcore::Direction;
use amup::probes::*;
use amup::rng::Rng;
use amup::stats::mean_stderr;
use amup::{Activation, ArchSpec, Loss, Model, Padding, Readout, Tensor};
use proptest::prelude::*;

fn settings(eta: f64, replicates: usize, seed: u64) -> ProbeSettings {
    ProbeSettings { eta, replicates, seed, ..Default::default() }
}

fn z_diff(a: Estimate, b: Estimate) -> f64 {
    (a.value - b.value) / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

#[test]
fn zero_learning_rate_gives_zero_energy() {
    let r = second_moments(&ArchSpec::mlp(8, 16, 4, 3), &settings(0.0, 8, 1)).unwrap();
    assert!(r.per_layer.iter().all(|&s| s == 0.0));
    assert_eq!(r.sbar, 0.0);
}

#[test]
fn linear_one_layer_delta_closed_form() {
    let spec = ArchSpec::mlp(3, 1, 1, 1).with_activation(Activation::Identity);
    let w = Tensor::from_vec(&[1, 3], vec![0.4, -0.2, 0.7]).unwrap();
    let model = Model::from_params(spec, vec![w, Tensor::filled(&[1, 1], 1.0)], 0).unwrap();
    let x = Tensor::from_vec(&[1, 3], vec![1.5, -1.0, 0.5]).unwrap();
    let y = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
    let eta = 0.01;
    let d = one_step_delta(&model, &x, &y, eta, Loss::Mse).unwrap();
    let z = 0.4 * 1.5 + 0.2 + 0.35;
    let expected = -eta * (z - 2.0) * x.sum_sq();
    assert!((d[0].data()[0] - expected).abs() < 1e-15, "{} vs {expected}", d[0].data()[0]);
}

#[test]
fn deltas_are_linear_in_eta_to_first_order() {
    let spec = ArchSpec::cnn1d(2, 8, 8, 4, 3, 4);
    let model = initialize(&spec, 4).unwrap();
    let mut rng = Rng::new(5);
    let (x, y) = probe_batch(&spec, 4, Loss::Mse, 1.0, &mut rng).unwrap();
    for eta in [1e-6, 1e-5, 1e-4] {
        let a = one_step_delta(&model, &x, &y, eta, Loss::Mse).unwrap();
        let b = one_step_delta(&model, &x, &y, 2.0 * eta, Loss::Mse).unwrap();
        for (da, db) in a.iter().zip(&b) {
            let mut twice = da.clone();
            twice.scale(2.0);
            let rel = (db.sub(&twice).unwrap().sum_sq() / da.sum_sq()).sqrt();
            assert!(rel < 0.1, "eta {eta}: {rel}");
        }
    }
}

#[test]
fn energy_is_quadratic_in_small_eta() {
    let spec = ArchSpec::mlp(16, 64, 6, 10).with_readout(Readout::MuP);
    let a = second_moments(&spec, &settings(1e-4, 64, 2)).unwrap();
    let b = second_moments(&spec, &settings(2e-4, 64, 2)).unwrap();
    let ratio = b.sbar / a.sbar;
    assert!((3.6..=4.4).contains(&ratio), "{ratio}");
}

#[test]
fn diverged_replicates_are_counted_not_averaged() {
    let spec = ArchSpec::mlp(4, 8, 3, 2);
    let r = second_moments(&spec, &settings(1e300, 8, 0));
    match r {
        Ok(rep) => assert!(rep.diverged > 0 && rep.per_layer.iter().all(|v| v.is_finite())),
        Err(e) => assert!(matches!(e, amup::Error::Insufficient(_)), "{e}"),
    }
}

proptest! {
    #[test]
    fn mean_energy_respects_layer_bounds(rows in prop::collection::vec(prop::collection::vec(0.0f64..1e6, 5), 2..20)) {
        let wrapped: Vec<Option<Vec<f64>>> = rows.into_iter().map(Some).collect();
        let r = ProbeReport::from_rows(&wrapped, 1.0, String::new(), 0).unwrap();
        let lo = r.per_layer.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.per_layer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= r.sbar && r.sbar <= hi);
    }
}

#[test]
fn probe_reports_respect_layer_bounds() {
    for spec in [ArchSpec::mlp(8, 32, 5, 4), ArchSpec::cnn1d(2, 8, 8, 4, 3, 4)] {
        let r = second_moments(&spec, &settings(1e-3, 16, 3)).unwrap();
        let lo = r.per_layer.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.per_layer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= r.sbar && r.sbar <= hi);
    }
}

#[test]
fn t_statistic_is_symmetric_and_nonnegative_on_the_diagonal() {
    let spec = ArchSpec::cnn1d(2, 8, 4, 3, 3, 2);
    let model = initialize(&spec, 6).unwrap();
    let mut rng = Rng::new(7);
    let (x, _) = probe_batch(&spec, 2, Loss::Mse, 1.0, &mut rng).unwrap();
    let d1: Direction = model.random_direction(0, &mut rng);
    let d2: Direction = model.random_direction(1, &mut rng);
    for h in 0..=spec.depth + 1 {
        let a = t_statistic(&model, &x, &d1, &d2, h).unwrap();
        let b = t_statistic(&model, &x, &d2, &d1, h).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert!(t_statistic(&model, &x, &d1, &d1, h).unwrap().value >= 0.0);
    }
}

#[test]
fn independent_directions_decorrelate_in_linear_network() {
    let spec = ArchSpec::mlp(16, 32, 4, 4).with_activation(Activation::Identity);
    let rows = t_samples(&spec, DirectionPair::Independent { first: 0, second: 2 }, 512, 1, 12).unwrap();
    for h in 3..=spec.depth + 1 {
        let (m, s) = mean_stderr(&rows.iter().map(|r| r[h]).collect::<Vec<_>>());
        assert!(m.abs() <= 3.0 * s, "h {h}: {m} ± {s}");
    }
}

#[test]
fn min_structure_depends_on_the_smaller_index() {
    let spec = ArchSpec::mlp(16, 64, 8, 10);
    let r = 2048;
    let e = |h1, h2| empirical_min_structure(&spec, h1, h2, r, 31).unwrap();
    let swapped = z_diff(e(2, 5), e(5, 2));
    assert!(swapped.abs() <= 3.0, "(2,5) vs (5,2): z = {swapped:.2}");
    let ratio = e(3, 3).value / e(1, 1).value;
    assert!((ratio / 3.0 - 1.0).abs() <= 0.3, "(3,3)/(1,1) = {ratio:.3}");
    let long = z_diff(e(2, 7), e(2, 2));
    assert!(long.abs() <= 3.0, "(2,7) vs (2,2): z = {long:.2}");
}

#[test]
fn squared_t_grows_linearly_in_the_smaller_index() {
    let spec = ArchSpec::mlp(16, 64, 8, 10);
    let pairs = [(1usize, 1usize), (2, 2), (3, 3), (4, 4), (6, 6), (8, 8), (2, 5), (5, 2), (2, 7), (1, 8)];
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (a.min(b) as f64, empirical_min_structure(&spec, a, b, 2048, 31).unwrap().value)).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(sxy > 0.0 && r2 >= 0.9, "slope {} R² {r2:.3}", sxy / sxx);
}

#[test]
fn circular_cnn_invariance_across_depths_and_widths() {
    for c in [16usize, 32] {
        for depth in [3usize, 5, 8] {
            let spec = ArchSpec::cnn1d(4, 16, c, depth, 3, 10);
            let rows = t_samples(&spec, DirectionPair::Shared { param: 0 }, 256, 1, 40 + depth as u64).unwrap();
            let diffs: Vec<f64> = rows.iter().map(|r| r[depth] - r[1]).collect();
            let (m, s) = mean_stderr(&diffs);
            assert!(m.abs() <= 3.0 * s, "C={c} L={depth}: {m} ± {s}");
        }
    }
}

#[test]
fn zero_padding_gap_is_bounded_by_boundary_term() {
    let spec = ArchSpec::cnn1d(4, 64, 32, 6, 3, 10).with_padding(Padding::Zero);
    let rows = t_samples(&spec, DirectionPair::Shared { param: 0 }, 256, 1, 77).unwrap();
    let level = mean_stderr(&rows.iter().map(|r| r[1]).collect::<Vec<_>>()).0;
    let frac = boundary_fraction(&spec, 2).unwrap();
    assert_eq!(frac, 1.0 / 64.0);
    for h in 2..=6 {
        let g = invariance_gap(&spec, h, 256, 77).unwrap();
        assert!(g.value.abs() <= frac * level + 3.0 * g.stderr, "h {h}: {g:?}");
    }
}

#[test]
fn boundary_gap_shrinks_with_length() {
    let dev = |n| boundary_deviation(&ArchSpec::cnn1d(4, n, 16, 4, 3, 10).with_padding(Padding::Zero), 4, 2048, 5).unwrap();
    let (short, long) = (dev(32), dev(256));
    assert!(long.measured.value.abs() < short.measured.value.abs(), "{short:?} vs {long:?}");
}

#[test]
fn single_channel_cnn_matches_mlp_gap() {
    let n = 8;
    let cnn = ArchSpec::cnn1d(1, n, 1, 4, 3, 2);
    let mlp = ArchSpec::mlp(n, n, 4, 2);
    let a = invariance_gap(&cnn, 4, 1024, 8).unwrap();
    let b = invariance_gap(&mlp, 4, 1024, 8).unwrap();
    assert!(z_diff(a, b).abs() <= 3.0, "{a:?} vs {b:?}");
}

#[test]
fn vanishing_branch_gives_unit_resnet_ratio() {
    let spec = ArchSpec::resnet_dense(16, 64, 10, 10).with_residual(1, 1e-6);
    let e = resnet_ratio(&spec, 5, 64, 3).unwrap();
    assert!((e.value - 1.0).abs() < 1e-4, "{e:?}");
}

#[test]
fn energy_law_is_width_invariant_at_leading_order() {
    let s = settings(1e-4, 1024, 19);
    let at = |c| second_moments(&ArchSpec::cnn1d(4, 8, c, 8, 3, 10).with_readout(Readout::MuP), &s).unwrap().sbar;
    let ratio = at(32) / at(128);
    assert!((ratio - 1.0).abs() <= 0.2, "{ratio}");
}

#[test]
fn cross_entropy_and_mse_differ_by_a_depth_independent_factor() {
    let ratios: Vec<f64> = [4usize, 8, 16]
        .iter()
        .map(|&l| {
            let spec = ArchSpec::mlp(16, 128, l, 10).with_readout(Readout::MuP);
            let mse = second_moments(&spec, &settings(1e-4, 256, 23)).unwrap().sbar;
            let ce = second_moments(&spec, &ProbeSettings { loss: Loss::CrossEntropy, ..settings(1e-4, 256, 23) }).unwrap().sbar;
            ce / mse
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo <= 1.3, "{ratios:?}");
}

#[test]
fn batch_size_trend_has_one_direction() {
    let spec = ArchSpec::mlp(16, 64, 6, 10).with_readout(Readout::MuP);
    let s: Vec<f64> = [8usize, 32, 128]
        .iter()
        .map(|&b| second_moments(&spec, &ProbeSettings { batch: b, ..settings(1e-4, 128, 29) }).unwrap().sbar)
        .collect();
    let (d1, d2) = (s[1] - s[0], s[2] - s[1]);
    assert!(d1.signum() == d2.signum() && d1.abs() > d2.abs(), "{s:?}");
}
