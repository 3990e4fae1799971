//! Synthetic absorptive objects, printed as ASCII masks.
//!
//! `cargo run --example shape_dataset`

use corrvis::datasets::{generate_shape_dataset, translate_clipped, DatasetSpec};

fn main() -> corrvis::Result<()> {
    let n = 16;
    let records = generate_shape_dataset(&DatasetSpec::new(5, 5, 12), n, 11)?;
    for r in records.iter().step_by(5) {
        println!("class {} ({:?}, {:?}), rotation {:.2} rad, scale {:.2}", r.class_id, r.family, r.split, r.rotation, r.scale);
        let shifted = translate_clipped(&r.mask, 1, -1);
        for (a, b) in r.mask.transmittance.chunks(n).zip(shifted.transmittance.chunks(n)) {
            let draw = |row: &[f64]| row.iter().map(|&t| if t > 0.0 { '#' } else { '.' }).collect::<String>();
            println!("  {}   {}", draw(a), draw(b));
        }
    }
    Ok(())
}
