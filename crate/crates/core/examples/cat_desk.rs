//! Desk-scale correlation-aware training against a fixed-source baseline.
//!
//! `cargo run --release --example cat_desk [-- <seed>]`

use corrvis::config::ExperimentConfig;
use corrvis::datasets::Split;
use corrvis::grad::digital_decrease_fraction;
use corrvis::pipeline::{correlation_audit, CatTrainer, SourceKind};

fn main() -> corrvis::Result<()> {
    let mut cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk.toml"))?;
    if let Some(seed) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.seed = seed;
    }
    let records = cfg.records()?;
    let cam = cfg.camera()?;
    let start = std::time::Instant::now();

    let initial = cfg.build_source(SourceKind::SpdcTrained)?;
    let mut cat = CatTrainer::new(initial.clone(), cam.clone(), &records, cfg.train.clone(), cfg.seed)?;
    let trace = cat.run()?;
    for r in &trace {
        println!("{:>3} {:<8} loss {:.4} train {:.3} test {:?}", r.epoch, r.group.as_str(), r.loss, r.train_acc, r.test_acc);
    }
    let mut base = CatTrainer::new(cfg.build_source(SourceKind::SpdcUntrained)?, cam, &records, cfg.train.clone(), cfg.seed)?;
    base.run()?;

    let test: Vec<_> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
    let audit = correlation_audit(&initial, &cat.source, &test, cfg.train.n_events)?;
    let k = audit.len() as f64;
    println!("digital loss decrease fraction {:.3}", digital_decrease_fraction(&trace).unwrap_or(0.0));
    println!(
        "test accuracy: trained source {:.3}, fixed source {:.3}",
        cat.test_accuracy(20, 10)?,
        base.test_accuracy(20, 10)?
    );
    println!(
        "mean pair transmission: before {:.4}, after {:.4}",
        audit.iter().map(|r| r.before).sum::<f64>() / k,
        audit.iter().map(|r| r.after).sum::<f64>() / k
    );
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
