//! Learning-rate sweeps on the synthetic task, a power-law fit of η* against
//! depth and two-anchor transfer to deeper nets. Takes a few minutes.

use amup::data::{synthetic, SyntheticParams};
use amup::scaling::{depth_points, fit_power_law, segmented_predict, sweep, transfer, Budget, FitKind, SelectionRule, SweepGrid};
use amup::{ArchSpec, Readout};

fn main() -> amup::Result<()> {
    let data = synthetic(SyntheticParams { train: 6400, val: 1280, ..Default::default() }, 0)?;
    let grid = SweepGrid::geometric(20, 1e-3, 10.0)?;
    let budget = Budget { epochs: 1, batch: 64 };
    let mut results = Vec::new();
    for depth in [2usize, 4, 8, 12] {
        let spec = ArchSpec::mlp(32, 64, depth, 10).with_readout(Readout::MuP);
        let r = sweep(&spec, &grid, &data, budget, SelectionRule::ValAccuracy, 0)?;
        let best = r.points.iter().filter(|p| !p.diverged).map(|p| p.metric).fold(0.0, f64::max);
        println!("L={depth:<3} η* = {:.3e}  accuracy {best:.3}{}", r.require_eta_star()?, if r.endpoint_hit { "  (grid endpoint)" } else { "" });
        results.push(r);
    }

    let pts = depth_points(&results, grid.spacing_dex());
    for kind in [FitKind::Ols, FitKind::Wls] {
        let f = fit_power_law(&pts, kind)?;
        println!("{}: α = {:.3}  R² = {:.3}  95% CI on slope [{:.2}, {:.2}]", kind.id(), f.alpha(), f.r2, f.slope_ci.0, f.slope_ci.1);
    }

    let eta = |d: usize| pts.iter().find(|p| p.depth == d).map(|p| 10f64.powf(p.log10_eta)).unwrap();
    let measured: Vec<(usize, f64)> = pts.iter().map(|p| (p.depth, 10f64.powf(p.log10_eta))).collect();
    for p in segmented_predict(&[(2, eta(2)), (4, eta(4))], &[8, 12], &measured)? {
        println!("two-anchor L={}: predicted {:.3e}, measured {:.3e}, error {:+.2} dex", p.depth, p.predicted, p.measured.unwrap(), p.error_dex.unwrap());
    }
    println!("L^-3/2 rule from L=4 to L=12: {:.3e}", transfer(eta(4), 4, 12)?);
    Ok(())
}
