//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and then asserts.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use amup::aggregators::{block_split_invariance, gm_cancellation, hm_sensitivity, merge_consistency_gap, Aggregator, EnergyVector};
use amup::harness::{fit_rows, predictions, run_experiment, ExperimentConfig, RunOptions, RunRecord};
use amup::init::gate_moment;
use amup::probes::{
    boundary_deviation, boundary_fraction, ce_gradient_norm, invariance_profile, min_overlap_check, resnet_ratio, resnet_span_ratio,
    second_moments, t_samples, DirectionPair, ProbeSettings,
};
use amup::rng::Rng;
use amup::scaling::{calibrate_amup_with, transfer, FitKind};
use amup::stats::mean_stderr;
use amup::{Activation, ArchSpec, Grid, Kernel, Loss, Padding, Readout};

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_01_exact_identities() {
    let mut worst_min = 0u64;
    for ell in 1..=100u64 {
        let mut brute = 0u64;
        for a in 1..=ell {
            for b in 1..=ell {
                brute += a.min(b);
            }
        }
        let closed = ell * (ell + 1) * (2 * ell + 1) / 6;
        let lib = min_overlap_check(ell as usize).unwrap().1;
        worst_min = worst_min.max(brute.abs_diff(closed)).max(lib.abs_diff(closed));
    }
    let mut worst_ce: f64 = 0.0;
    for c in [2usize, 10, 100] {
        let (analytic, through_loss) = ce_gradient_norm(c).unwrap();
        let oracle = (1.0 - 1.0 / c as f64).powi(2) + (c as f64 - 1.0) / (c * c) as f64;
        worst_ce = worst_ce.max((analytic - oracle).abs()).max((through_loss - oracle).abs());
    }
    let mut rng = Rng::new(1);
    let mut worst_merge: f64 = 0.0;
    let mut worst_hm: f64 = 0.0;
    for _ in 0..200 {
        let l = 2 + rng.below(10);
        let v: Vec<f64> = (0..l).map(|_| 0.01 + 10.0 * rng.uniform()).collect();
        let cut = 1 + rng.below(l - 1);
        let ev = EnergyVector::new(v.clone()).unwrap().with_partition(vec![(0..cut).collect(), (cut..l).collect()]).unwrap();
        worst_merge = worst_merge.max(merge_consistency_gap(&ev, Aggregator::Am).unwrap());
        let i = rng.below(l);
        let hm = |w: &[f64]| w.len() as f64 / w.iter().map(|x| 1.0 / x).sum::<f64>();
        let step = 1e-6 * v[i];
        let (mut p, mut m) = (v.clone(), v.clone());
        p[i] += step;
        m[i] -= step;
        let fd = (hm(&p) - hm(&m)) / (2.0 * step);
        let analytic = hm_sensitivity(&ev, i).unwrap();
        worst_hm = worst_hm.max((analytic - fd).abs() / fd.abs());
    }
    let ok = worst_min == 0 && worst_ce <= 1e-12 && worst_merge <= 1e-12 && worst_hm <= 1e-6;
    verdict(
        1,
        "exact identities",
        ok,
        format!("min-sum mismatch {worst_min}, CE norm err {worst_ce:.1e}, AM merge gap {worst_merge:.1e}, HM FD rel err {worst_hm:.1e}"),
    );
}

#[test]
fn criterion_02_gate_moments() {
    let relu = gate_moment(Activation::Relu, 128).unwrap();
    let gelu = gate_moment(Activation::Gelu, 128).unwrap();
    // Independent oracle: Simpson's rule on [-12, 12].
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |z: f64| 0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2));
    let gelu_prime = |z: f64| cdf(z) + z * phi(z);
    let n = 20_000;
    let h = 24.0 / n as f64;
    let mut simpson = 0.0;
    for i in 0..=n {
        let z = -12.0 + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        simpson += w * gelu_prime(z).powi(2) * phi(z);
    }
    simpson *= h / 3.0;
    let ok = relu == 0.5 && (gelu - 0.456).abs() <= 0.001 && (gelu - simpson).abs() < 1e-9;
    verdict(2, "gate moments", ok, format!("ReLU {relu}, GELU {gelu:.6} (Simpson oracle {simpson:.6})"));
}

#[test]
fn criterion_03_circular_invariance() {
    let r = 256;
    let mut worst_z: f64 = 0.0;
    let mut levels = Vec::new();
    for k in [3usize, 5, 7] {
        let spec = ArchSpec::cnn1d(4, 64, 32, 6, k, 10);
        let profile = invariance_profile(&spec, r, 3000 + k as u64).unwrap();
        for g in &profile.gaps {
            worst_z = worst_z.max(g.value.abs() / g.stderr);
        }
        let rows = t_samples(&spec, DirectionPair::Shared { param: 0 }, r, 1, 3000 + k as u64).unwrap();
        let pooled: Vec<f64> = rows.iter().map(|row| row[1..=6].iter().sum::<f64>() / 6.0).collect();
        levels.push((k, mean_stderr(&pooled)));
    }
    let mut worst_k: f64 = 0.0;
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            let ((_, (a, sa)), (_, (b, sb))) = (levels[i], levels[j]);
            worst_k = worst_k.max((a - b).abs() / (sa * sa + sb * sb).sqrt());
        }
    }
    let desc: Vec<String> = levels.iter().map(|(k, (m, s))| format!("k={k}: {m:.4}±{s:.4}")).collect();
    verdict(
        3,
        "circular CNN1D invariance",
        worst_z <= 3.0 && worst_k <= 3.0,
        format!("max |gap|/stderr {worst_z:.2}, max k-pair z {worst_k:.2}; E[T] {}", desc.join(", ")),
    );
}

#[test]
fn criterion_04_boundary_correction() {
    let r = 8192;
    let dev = |n: usize| {
        let spec = ArchSpec::cnn1d(4, n, 32, 6, 3, 10).with_padding(Padding::Zero);
        boundary_deviation(&spec, 6, r, 41).unwrap()
    };
    let (d32, d64) = (dev(32), dev(64));
    let ratio = d32.measured.value / d64.measured.value;
    // Enumeration oracle for the 2D prediction: largest |offset| per axis over the kernel.
    let mut worst: f64 = 0.0;
    for (h, w, kh, kw) in [(16usize, 32usize, 3usize, 3usize), (8, 8, 5, 3), (12, 20, 3, 7), (9, 31, 1, 5)] {
        let spec = ArchSpec::cnn2d(2, Grid::plane(h, w), 4, 2, (kh, kw), 3).with_padding(Padding::Zero);
        let k = Kernel::rect(kh, kw);
        let sh = k.offsets().iter().map(|o| o.0.unsigned_abs()).max().unwrap() as f64;
        let sw = k.offsets().iter().map(|o| o.1.unsigned_abs()).max().unwrap() as f64;
        worst = worst.max((boundary_fraction(&spec, 1).unwrap() - (sh / h as f64 + sw / w as f64)).abs());
    }
    let spec = ArchSpec::cnn2d(2, Grid::plane(16, 32), 4, 2, (3, 3), 3).with_padding(Padding::Zero);
    let example = boundary_fraction(&spec, 1).unwrap();
    let ok = (1.4..=2.8).contains(&ratio) && worst < 1e-15 && (example - 0.09375).abs() < 1e-15;
    verdict(
        4,
        "zero-padding boundary correction",
        ok,
        format!(
            "gap N=32 {:.5}±{:.5}, N=64 {:.5}±{:.5}, ratio {ratio:.2}; 2D formula vs enumeration max err {worst:.1e}, 16x32 3x3 -> {example}",
            d32.measured.value, d32.measured.stderr, d64.measured.value, d64.measured.stderr
        ),
    );
}

#[test]
fn criterion_05_resnet_recursion() {
    let spec = ArchSpec::resnet_dense(16, 128, 10, 10).with_residual(1, 2.0);
    let r = 512;
    let mut worst_z: f64 = 0.0;
    let mut ratios = Vec::new();
    for h in 1..=10 {
        let e = resnet_ratio(&spec, h, r, 55).unwrap();
        worst_z = worst_z.max((e.value - 1.1).abs() / e.stderr);
        ratios.push(e.value);
    }
    let cumulative = resnet_span_ratio(&spec, 0, 10, r, 55).unwrap();
    let e = std::f64::consts::E;
    let ok = worst_z <= 3.0 && (1.0 / e..=e).contains(&cumulative.value);
    verdict(
        5,
        "ResNet block recursion",
        ok,
        format!(
            "per-block ratios {:.4}..{:.4}, max |ratio-1.1|/stderr {worst_z:.2}, cumulative {:.4}±{:.4}",
            ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            ratios.iter().cloned().fold(0.0, f64::max),
            cumulative.value,
            cumulative.stderr
        ),
    );
}

#[test]
fn criterion_06_energy_growth_law() {
    let settings = ProbeSettings { eta: 1e-4, replicates: 1024, seed: 6, ..Default::default() };
    let families: [(&str, fn(usize) -> ArchSpec); 2] = [
        ("MLP", |l| ArchSpec::mlp(16, 512, l, 10).with_readout(Readout::MuP)),
        ("CNN1D", |l| ArchSpec::cnn1d(4, 8, 256, l, 3, 10).with_readout(Readout::MuP)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, build) in families {
        let pts: Vec<(f64, f64)> = [4usize, 8, 16, 32]
            .iter()
            .map(|&l| ((l as f64).ln(), second_moments(&build(l), &settings).unwrap().sbar.ln()))
            .collect();
        let depth_slope = ols_slope(&pts);
        let eta_pts: Vec<(f64, f64)> = [1e-5, 1e-4, 1e-3]
            .iter()
            .map(|&eta| (f64::ln(eta), second_moments(&build(8), &ProbeSettings { eta, ..settings }).unwrap().sbar.ln()))
            .collect();
        let eta_slope = ols_slope(&eta_pts);
        ok &= (2.7..=3.3).contains(&depth_slope) && (1.8..=2.2).contains(&eta_slope);
        parts.push(format!("{name}: d log S̄/d log L {depth_slope:.3}, d log S̄/d log η {eta_slope:.3}"));
    }
    verdict(6, "Θ(η²L³) energy law", ok, parts.join("; "));
}

const SWEEP_CONFIG: &str = "\
family = mlp
depths = 4, 6, 8, 12, 16, 24
width = 64
readout = mup
seeds = 0, 1, 2
segment = 4, 6 -> 12, 16
";

fn desk_sweep() -> &'static (ExperimentConfig, RunRecord) {
    static SWEEP: OnceLock<(ExperimentConfig, RunRecord)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let config = ExperimentConfig::parse(SWEEP_CONFIG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let record = run_experiment(&config, dir.path(), RunOptions::default()).unwrap();
        (config, record)
    })
}

#[test]
fn criterion_07_desk_scale_exponent() {
    let (config, record) = desk_sweep();
    assert_eq!(record.rows.len(), 6 * 3 * 40);
    let fits = fit_rows(config, record).unwrap();
    let wls = fits.iter().find(|f| f.kind == FitKind::Wls).unwrap();
    let ols = fits.iter().find(|f| f.kind == FitKind::Ols).unwrap();
    verdict(
        7,
        "desk-scale depth-LR exponent",
        (1.2..=1.8).contains(&wls.alpha()),
        format!("WLS alpha {:.3} (R² {:.3}, slope CI [{:.3}, {:.3}]), OLS alpha {:.3}", wls.alpha(), wls.r2, wls.slope_ci.0, wls.slope_ci.1, ols.alpha()),
    );
}

#[test]
fn criterion_08_zero_shot_transfer() {
    let (config, record) = desk_sweep();
    let preds = predictions(config, record).unwrap();
    let errs: Vec<(usize, f64)> = preds[0].iter().map(|p| (p.depth, p.error_dex.unwrap())).collect();
    let worst = errs.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let mut rng = Rng::new(8);
    let mut comp: f64 = 0.0;
    for _ in 0..1000 {
        let x = 10f64.powf(-4.0 + 4.0 * rng.uniform());
        let (a, b, c) = (1 + rng.below(30), 1 + rng.below(30), 1 + rng.below(30));
        let two = transfer(transfer(x, a, b).unwrap(), b, c).unwrap();
        comp = comp.max((two - transfer(x, a, c).unwrap()).abs() / x);
    }
    let desc: Vec<String> = errs.iter().map(|(d, e)| format!("L={d}: {e:+.3} dex")).collect();
    verdict(
        8,
        "zero-shot two-anchor transfer",
        worst <= 0.3 && comp <= 1e-12,
        format!("{}; composition rel err {comp:.1e}", desc.join(", ")),
    );
}

#[test]
fn criterion_09_width_invariance() {
    let settings = ProbeSettings { replicates: 128, seed: 9, ..Default::default() };
    let eta = |c: usize| {
        let spec = ArchSpec::cnn1d(4, 8, c, 8, 3, 10).with_readout(Readout::MuP);
        calibrate_amup_with(&spec, 1e-4, &settings, 0.05).unwrap()
    };
    let (a, b) = (eta(32), eta(128));
    let gap = (a.eta / b.eta).log10();
    verdict(
        9,
        "width invariance of calibrated η",
        gap.abs() <= 0.15,
        format!("C=32 η {:.4e} (S̄ {:.3}), C=128 η {:.4e} (S̄ {:.3}), gap {gap:+.3} dex", a.eta, a.sbar_at_eta, b.eta, b.sbar_at_eta),
    );
}

#[test]
fn criterion_10_aggregator_counterexamples() {
    let (gm, am) = gm_cancellation(0.01, 10).unwrap();
    let gaps = block_split_invariance(&[2.0, 2.0], &[vec![1.0, 1.0], vec![2.0]]).unwrap();
    let ok = (gm - 1.0).abs() <= 1e-12 && am > 10.0 && gaps.am == 0.0 && gaps.gm > 0.0;
    verdict(
        10,
        "aggregator counterexamples",
        ok,
        format!("A4: GM {gm}, AM {am:.4}; A6: AM gap {}, GM gap {:.4}", gaps.am, gaps.gm),
    );
}

fn runs_without_wall(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("runs.csv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_11_engineering() {
    let config = ExperimentConfig::parse("depths = 2, 3\neta_count = 6\nseeds = 4, 5\ntrain_samples = 1280\nval_samples = 256\n").unwrap();
    let opts = RunOptions { max_jobs: None, point_probe_replicates: 8 };
    let run = |dir: &Path, max_jobs: Option<usize>| {
        let rec = run_experiment(&config, dir, RunOptions { max_jobs, ..opts }).unwrap();
        amup::harness::write_runs(&rec, &dir.join("runs.csv")).unwrap();
    };
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path(), None);
    run(b.path(), None);
    run(c.path(), Some(12));
    let half = std::fs::read_to_string(c.path().join("runs.csv")).unwrap().lines().count() - 1;
    run(c.path(), None);
    let deterministic = runs_without_wall(a.path()) == runs_without_wall(b.path());
    let resumed = runs_without_wall(a.path()) == runs_without_wall(c.path());

    let mut worst: f64 = 0.0;
    for (_, spec) in common::gradient_zoo() {
        for loss in [Loss::Mse, Loss::CrossEntropy] {
            worst = worst.max(common::max_fd_error(&spec, 17, loss, 40));
        }
    }
    verdict(
        11,
        "determinism, resume, gradients",
        deterministic && resumed && half == 12 && worst <= 1e-6,
        format!("rerun identical {deterministic}, resume after {half}/24 jobs identical {resumed}, worst FD rel err {worst:.1e}"),
    );
}
