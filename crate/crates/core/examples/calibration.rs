//! AM-μP calibration: the learning rate at which the mean one-step update
//! energy S̄ equals 1, compared with the L^-3/2 rule.

use amup::probes::ProbeSettings;
use amup::scaling::{calibrate_amup, transfer};
use amup::{ArchSpec, Readout};

fn main() -> amup::Result<()> {
    let settings = ProbeSettings { replicates: 64, seed: 1, ..Default::default() };
    let mut base = None;
    for l in [4usize, 8, 16] {
        let spec = ArchSpec::cnn1d(4, 8, 64, l, 3, 10).with_readout(Readout::MuP);
        let cal = calibrate_amup(&spec, 1e-4, &settings)?;
        let (l0, e0) = *base.get_or_insert((l, cal.eta));
        let rule = transfer(e0, l0, l)?;
        println!(
            "L={l:<3} closed form {:.4e}  calibrated {:.4e} (S̄ = {:.3}, {} probes)  L^-3/2 rule {:.4e}  gap {:+.3} dex",
            cal.closed_form,
            cal.eta,
            cal.sbar_at_eta,
            cal.evaluations.len(),
            rule,
            (cal.eta / rule).log10()
        );
    }
    Ok(())
}
