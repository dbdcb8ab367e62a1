//! Monte-Carlo checks of the derivative statistics: circular CNNs keep E[T_h]
//! flat in depth, zero padding leaks an s/N boundary term, and residual blocks
//! grow it by 1 + c/2K per block.

use amup::probes::{boundary_deviation, invariance_profile, resnet_ratio, resnet_span_ratio};
use amup::{ArchSpec, Padding};

fn main() -> amup::Result<()> {
    let r = 256;
    let spec = ArchSpec::cnn1d(4, 64, 32, 6, 3, 10);
    let profile = invariance_profile(&spec, r, 1)?;
    println!("circular CNN1D, C=32 N=64 k=3");
    for (h, m) in profile.means.iter().enumerate() {
        println!("  E[T_{}] = {:.4} ± {:.4}", h + 1, m.value, m.stderr);
    }

    for n in [32, 64] {
        let zero = ArchSpec::cnn1d(4, n, 32, 6, 3, 10).with_padding(Padding::Zero);
        let d = boundary_deviation(&zero, 6, 2048, 2)?;
        println!("zero padding N={n}: relative gap per layer {:+.5} ± {:.5} (s/N = {:.5})", d.measured.value, d.measured.stderr, d.predicted_fraction);
    }

    let res = ArchSpec::resnet_dense(16, 128, 10, 10).with_residual(1, 2.0);
    let e = resnet_ratio(&res, 5, 512, 3)?;
    let all = resnet_span_ratio(&res, 0, 10, 512, 3)?;
    println!("resnet c=2 K=10: block ratio {:.4} ± {:.4} (1 + c/2K = 1.1), over all blocks {:.3}", e.value, e.stderr, all.value);
    Ok(())
}
