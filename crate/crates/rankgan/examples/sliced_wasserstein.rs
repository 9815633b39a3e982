//! Estimate distribution distances with the sliced Wasserstein metric:
//! exact 1-d transport averaged over random projections.
//!
//! ```text
//! cargo run --example sliced_wasserstein
//! ```

use rankgan::data::{sample_real, DatasetKind};
use rankgan::metrics::{mode_coverage, ring8_centers, sliced_wasserstein, wasserstein1_1d};

fn main() -> rankgan::Result<()> {
    // 1-d exact: two shifted normal samples are one shift apart.
    let a = sample_real(DatasetKind::Gauss1dPair, 2000, 0)?;
    let left: Vec<f64> = a.data()[..1000].to_vec();
    let right: Vec<f64> = a.data()[1000..].to_vec();
    println!(
        "w1 between the two 1-d modes: {:.3} (centers are 4 apart)",
        wasserstein1_1d(&left, &right)?
    );

    // The ring against itself, a noisy copy, and pure noise.
    let ring = sample_real(DatasetKind::Ring8, 512, 1)?;
    let ring_again = sample_real(DatasetKind::Ring8, 512, 2)?;
    let mut blurred = ring.clone();
    for (i, v) in blurred.data_mut().iter_mut().enumerate() {
        *v += 0.3 * ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.15;
    }
    println!(
        "sw(ring, fresh ring)   = {:.4}",
        sliced_wasserstein(&ring, &ring_again, 256, 7)?
    );
    println!(
        "sw(ring, blurred ring) = {:.4}",
        sliced_wasserstein(&ring, &blurred, 256, 7)?
    );

    println!(
        "ring mode coverage of the fresh sample: {:.2}",
        mode_coverage(&ring_again, &ring8_centers(), 0.15)?
    );
    Ok(())
}
