//! Trains the free pair-creation matrix, then scores it under uniform photon
//! loss.
//!
//! `cargo run --release --example loss_sweep`

use corrvis::config::ExperimentConfig;
use corrvis::datasets::Split;
use corrvis::pipeline::{loss_sweep, CatTrainer, EvalSpec, SourceKind};
use corrvis::rng::{derive_seed, tag};

fn main() -> corrvis::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/ideal.toml"))?;
    let records = cfg.records()?;
    let cam = cfg.camera()?;
    let mut trainer = CatTrainer::new(cfg.build_source(SourceKind::SpdcIdeal)?, cam.clone(), &records, cfg.train.clone(), cfg.seed)?;
    trainer.run()?;

    let test: Vec<_> = records.into_iter().filter(|r| r.split == Split::Test).collect();
    let ls = &cfg.loss_sweep;
    let base = EvalSpec { sets_per_object: ls.sets_per_object, passes: ls.passes, ..cfg.eval_spec() };
    let seed = derive_seed(cfg.seed, &[tag::EVAL]);
    println!("transmission,accuracy,stderr,clicks_per_shot");
    for (t, r) in loss_sweep(&trainer.source, &trainer.model, &test, &cam, &base, &ls.transmissions, seed)? {
        println!("{t},{:.4},{:.4},{:.2}", r.accuracy, r.stderr, r.clicks_per_shot);
    }
    Ok(())
}
