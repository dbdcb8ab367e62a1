//! Why the network energy is an arithmetic mean: the axiom table, plus the
//! geometric-mean cancellation that hides a blown-up layer.

use amup::aggregators::{aggregate_values, axiom_checks, gm_cancellation, Aggregator, EnergyVector, merge_consistency_gap};

fn main() -> amup::Result<()> {
    for c in axiom_checks()? {
        println!("{:<3} {:<4} {}  [{}]", c.axiom, if c.passed { "ok" } else { "FAIL" }, c.claim, c.witness);
    }

    let (gm, am) = gm_cancellation(1e-3, 12)?;
    println!("\none layer at 1e-3, one at 1e3, ten at 1: GM = {gm}, AM = {am:.2}");

    let v = EnergyVector::new(vec![0.2, 0.4, 3.0, 5.0, 0.9])?.with_partition(vec![vec![0, 1], vec![2, 3, 4]])?;
    for kind in Aggregator::ALL {
        println!("{}: value {:.4}, merge gap {:.2e}", kind.name(), aggregate_values(v.values(), kind)?, merge_consistency_gap(&v, kind)?);
    }
    Ok(())
}
