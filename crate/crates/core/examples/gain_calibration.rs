//! EM-gain fit to a synthetic dark-frame histogram: Gaussian read noise
//! plus a 5% population of exponentially amplified events.
//!
//! `cargo run --release --example gain_calibration [-- <seed> [histogram.txt]]`

use std::fmt::Write as _;

use corrvis::calibration::{fit_gain, GainFitOptions, Histogram};
use rand::Rng;
use rand_distr::{Exp, Normal};

fn main() -> corrvis::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = corrvis::rng::seeded(seed);
    let read = Normal::new(100.0, 10.0).expect("valid normal");
    let em = Exp::new(1.0 / 1000.0).expect("valid rate");
    let samples: Vec<f64> = (0..5000)
        .map(|_| {
            let signal: f64 = if rng.gen::<f64>() < 0.05 { rng.sample(em) } else { 0.0 };
            (rng.sample::<f64, _>(read) + signal).round()
        })
        .collect();
    let hist = Histogram::from_samples(&samples);
    if let Some(path) = args.next() {
        let mut text = String::from("# value count\n");
        for (v, n) in &hist.bins {
            let _ = writeln!(text, "{v} {n}");
        }
        std::fs::write(&path, text)?;
        println!("wrote {path}");
    }
    let fit = fit_gain(&hist, &GainFitOptions::default())?;
    println!(
        "g {:.1} (true 1000), peak mu {:.2} sigma {:.2}, tail from {:.1} with {} samples",
        fit.g, fit.mu, fit.sigma, fit.tail_start, fit.tail_samples
    );
    Ok(())
}
