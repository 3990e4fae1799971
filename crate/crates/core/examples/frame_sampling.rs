//! Simulated camera frames: pair events through an object with background
//! clicks, compared against the analytic pair distribution.
//!
//! `cargo run --release --example frame_sampling`

use corrvis::optics::{PhasematchParams, PixelGrid, SlmPhase};
use corrvis::pipeline::{Source, SourceKind};
use corrvis::sensing::{acquire_set, sample_pairs, AcquisitionSpec, CameraModel, ObjectMask};

fn main() -> corrvis::Result<()> {
    let grid = PixelGrid::unit(6)?;
    let pm = PhasematchParams::new(0.8, 0.12, 0.05, 1.0)?;
    let source = Source::new(SourceKind::SpdcUntrained, grid, pm, SlmPhase::gaussian(12, 4.0))?;
    let jpd = source.jpd()?;

    let n_events = 200_000;
    let events = sample_pairs(&jpd, n_events, &mut corrvis::rng::seeded(1))?;
    let mut counts = vec![0u64; jpd.probs.len()];
    for &(i, j) in &events {
        counts[corrvis::optics::pair_index(i, j, jpd.n_modes)] += 1;
    }
    let worst = jpd
        .probs
        .iter()
        .zip(&counts)
        .filter(|(p, _)| **p > 1e-4)
        .map(|(&p, &c)| (c as f64 - p * n_events as f64).abs() / (p * (1.0 - p) * n_events as f64).sqrt())
        .fold(0.0, f64::max);
    println!("{n_events} pair events, largest deviation from the analytic distribution {worst:.2} sigma");

    let mut mask = vec![0.0; grid.n_pixels()];
    for r in 1..5 {
        for c in 2..4 {
            mask[r * grid.n + c] = 1.0;
        }
    }
    let object = ObjectMask::new(grid.n, mask)?;
    let set = acquire_set(&source.illumination()?, &grid, &object, &CameraModel::default(), &AcquisitionSpec::new(20, 5), 3)?;
    for (k, frame) in set.frames.iter().enumerate() {
        println!("frame {k}: {} clicks", frame.total());
    }
    println!("mean frame:");
    for row in set.mean_frame().chunks(grid.n) {
        println!("  {}", row.iter().map(|v| format!("{v:5.1}")).collect::<String>());
    }
    Ok(())
}
