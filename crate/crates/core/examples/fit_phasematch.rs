//! Recovers phasematching parameters from three noisy mean-field
//! measurements taken with different modulator patterns.
//!
//! `cargo run --release --example fit_phasematch [-- <seed> [measurements.bin]]`
//!
//! With a second argument the synthetic measurements are also written as a
//! container for `corrvis fit-pm --measurements`.

use std::f64::consts::PI;

use corrvis::calibration::{fit_phasematching, FitOptions, MeanFieldMeasurement};
use corrvis::io::measurements_container;
use corrvis::optics::{pump_spectrum_from_slm, spdc_mean_field, MeanField, PhasematchParams, PixelGrid, SlmPhase};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> corrvis::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let grid = PixelGrid::unit(16)?;
    let truth = PhasematchParams::new(0.8, 0.12, 0.05, 1.0)?;
    let m = 32;
    let c = (m as f64 - 1.0) / 2.0;
    let ramp: Vec<f64> = (0..m * m).map(|k| 2.0 * PI * 3.0 * (k % m) as f64 / m as f64).collect();
    let lens: Vec<f64> = (0..m * m)
        .map(|k| {
            let (r, col) = ((k / m) as f64 - c, (k % m) as f64 - c);
            0.02 * (r * r + col * col)
        })
        .collect();
    let patterns = [
        SlmPhase::disk(m, 10.0),
        SlmPhase::disk(m, 10.0).with_phase(ramp)?,
        SlmPhase::gaussian(m, 8.0).with_phase(lens)?,
    ];

    let mut rng = corrvis::rng::seeded(seed);
    let mut measurements = Vec::new();
    for slm in patterns {
        let power: Vec<f64> = pump_spectrum_from_slm(&slm, &grid)?.values.iter().map(|v| v.norm_sqr()).collect();
        let clean = spdc_mean_field(&power, &truth, &grid)?;
        let noisy = clean.iter().map(|v| (v * (1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal))).max(0.0)).collect();
        measurements.push(MeanFieldMeasurement { slm, observed: MeanField::new(grid.n, noisy)? });
    }
    if let Some(path) = args.next() {
        measurements_container(&grid, &measurements)?.write(&path)?;
        println!("wrote {path}");
    }

    let init = PhasematchParams::new(0.65, 0.15, 0.04, 1.2)?;
    let fit = fit_phasematching(&measurements, &grid, &init, &FitOptions::default())?;
    println!("iterations {} converged {} objective {:.3e}", fit.iterations, fit.converged, fit.objective);
    for (name, (got, want)) in ["mu00", "alpha_lz", "delta_lz", "amplitude"]
        .iter()
        .zip(fit.params.to_array().iter().zip(truth.to_array()))
    {
        println!("{name:<10} fitted {got:.5} true {want:.5} rel.err {:.2}%", 100.0 * (got - want).abs() / want);
    }
    Ok(())
}
