//! One-step update energy S̄ grows like η²L³: fit the log-log slopes.

use amup::probes::{second_moments, ProbeSettings};
use amup::{ArchSpec, Readout};

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn main() -> amup::Result<()> {
    let settings = ProbeSettings { eta: 1e-4, replicates: 128, seed: 0, ..Default::default() };
    let build = |l| ArchSpec::mlp(16, 256, l, 10).with_readout(Readout::MuP);

    let mut by_depth = Vec::new();
    for l in [4usize, 8, 16] {
        let rep = second_moments(&build(l), &settings)?;
        println!("L={l:<3} S̄ = {:.4e} ± {:.1e}   per layer {:.2e} .. {:.2e}", rep.sbar, rep.sbar_stderr, rep.per_layer[0], rep.per_layer[l - 1]);
        by_depth.push(((l as f64).ln(), rep.sbar.ln()));
    }
    println!("d log S̄ / d log L = {:.3}", slope(&by_depth));

    let mut by_eta = Vec::new();
    for eta in [1e-5, 1e-4, 1e-3] {
        let rep = second_moments(&build(8), &ProbeSettings { eta, ..settings })?;
        by_eta.push((eta.ln(), rep.sbar.ln()));
    }
    println!("d log S̄ / d log η = {:.3}", slope(&by_eta));
    Ok(())
}
