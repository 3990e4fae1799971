//! Two-pixel, four-class toy: error of a photon-pair source against the
//! best beam-split laser at the same mean photon number.
//!
//! `cargo run --example toy_oracle`

use corrvis::toy::{default_eps_grid, error_sweep};

fn main() -> corrvis::Result<()> {
    println!("eps,error_correlated,error_uncorrelated,best_theta");
    for r in error_sweep(0.1, &default_eps_grid(), 181)? {
        println!("{:.2},{:.6},{:.6},{:.4}", r.eps, r.error_correlated, r.error_uncorrelated, r.best_theta);
    }
    Ok(())
}
