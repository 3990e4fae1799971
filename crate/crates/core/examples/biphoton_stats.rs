//! Pair-creation matrix, mean field, joint pair distribution and photon
//! covariance of a pump-shaped source on a small grid.
//!
//! `cargo run --example biphoton_stats`

use corrvis::optics::{
    biphoton_jpd, build_greens, covariance, mean_field, pump_spectrum_from_slm, PhasematchParams, PixelGrid, SlmPhase,
};

fn main() -> corrvis::Result<()> {
    let grid = PixelGrid::unit(4)?;
    let pm = PhasematchParams::new(0.8, 0.12, 0.05, 1.0)?;
    let slm = SlmPhase::gaussian(grid.sum_side(), 2.5);
    let greens = build_greens(&pump_spectrum_from_slm(&slm, &grid)?, &pm, &grid)?;
    println!("S asymmetry {:.1e}", greens.asymmetry());

    let mean = mean_field(&greens)?;
    println!("mean field (total {:.4}):", mean.total());
    for row in mean.values.chunks(grid.n) {
        println!("  {}", row.iter().map(|v| format!("{v:8.4}")).collect::<String>());
    }

    let jpd = biphoton_jpd(&greens)?;
    let mut top: Vec<(usize, f64)> = jpd.probs.iter().copied().enumerate().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("most likely pairs:");
    for (k, p) in top.into_iter().take(4) {
        let (i, j) = corrvis::optics::pair_from_index(k, jpd.n_modes);
        println!("  pixels {i:>2} & {j:>2}  p = {p:.4}  q_i = {:?}  q_j = {:?}", grid.q(i), grid.q(j));
    }

    let cov = covariance(&greens)?;
    let c = grid.center() * grid.n + grid.center();
    let partner = (0..cov.n_modes).filter(|&k| k != c).max_by(|&a, &b| cov.at(c, a).total_cmp(&cov.at(c, b)));
    println!("strongest covariance partner of the center pixel {c}: {partner:?}");
    Ok(())
}
