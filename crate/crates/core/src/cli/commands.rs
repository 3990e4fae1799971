use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::calibration::{fit_gain, fit_phasematching, Histogram};
use crate::config::ExperimentConfig;
use crate::datasets::{ObjectRecord, Split};
use crate::error::{Error, Result};
use crate::grad::{digital_decrease_fraction, trace_csv};
use crate::io::{
    frames_container, frames_from, masks_container, measurements_from, provenance, Checkpoint, Container, RngState,
};
use crate::model::{argmax, forward, softmax};
use crate::optics::PhasematchParams;
use crate::pipeline::{correlation_audit, eval_surface, loss_sweep, CatTrainer, EvalSpec};
use crate::rng::{self, tag};
use crate::sensing::{acquire_set, AcquisitionSpec};
use crate::toy::error_sweep;

pub(super) struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    hash: String,
}

impl Context {
    pub(super) fn new(cfg: ExperimentConfig, out: PathBuf) -> Self {
        let hash = cfg.hash();
        Self { cfg, out, hash }
    }

    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn tag_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.seed())
    }

    fn csv(&self, columns: &str) -> String {
        format!("{}{columns}\n", self.tag_line())
    }

    fn write(&self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.out.join(name), content)?;
        Ok(())
    }

    fn write_json(&self, name: &str, body: Value) -> Result<Value> {
        let mut doc = json!({ "provenance": provenance(&self.hash, self.seed()) });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        self.write(name, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        Ok(doc)
    }

    fn stamp(&self, c: Container) -> Result<Container> {
        c.with_meta("config_hash", &self.hash)?.with_meta("config_seed", self.seed())
    }

    fn test_records(&self) -> Result<Vec<ObjectRecord>> {
        Ok(self.cfg.records()?.into_iter().filter(|r| r.split == Split::Test).collect())
    }

    fn checkpoint(&self, path: &Path) -> Result<Checkpoint> {
        let ck = Checkpoint::read(path)?;
        let (grid, model) = (ck.source.grid, ck.model.config);
        if grid != self.cfg.grid {
            return Err(Error::Config(format!(
                "checkpoint/config mismatch: checkpoint grid {}x{} (dq {}) vs config {}x{} (dq {})",
                grid.n, grid.n, grid.dq, self.cfg.grid.n, self.cfg.grid.n, self.cfg.grid.dq
            )));
        }
        if model.n_classes != self.cfg.dataset.n_classes || model.input_dim != grid.n_pixels() {
            return Err(Error::Config(format!(
                "checkpoint/config mismatch: model has {} classes, dataset has {}",
                model.n_classes, self.cfg.dataset.n_classes
            )));
        }
        Ok(ck)
    }

    pub(super) fn toy(&self) -> Result<()> {
        let t = &self.cfg.toy;
        let rows = error_sweep(t.mean_photons, &t.eps, t.grid_steps)?;
        let mut csv = self.csv("eps,error_correlated,error_uncorrelated,best_theta");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{}", r.eps, r.error_correlated, r.error_uncorrelated, r.best_theta);
        }
        self.write("toy.csv", &csv)?;
        let dominates = rows.iter().all(|r| r.error_correlated <= r.error_uncorrelated);
        self.write_json(
            "toy.json",
            json!({ "mean_photons": t.mean_photons, "grid_steps": t.grid_steps, "correlated_dominates": dominates, "rows": rows }),
        )?;
        Ok(())
    }

    pub(super) fn dataset_generate(&self) -> Result<()> {
        let records = self.cfg.records()?;
        let masks: Vec<_> = records.iter().map(|r| &r.mask).collect();
        let ids: Vec<usize> = records.iter().map(|r| r.instance_id).collect();
        self.stamp(masks_container(&masks)?.with_meta("instance_ids", &ids)?)?
            .write(self.out.join("masks.bin"))?;
        let entries: Vec<Value> = records
            .iter()
            .map(|r| {
                json!({
                    "instance_id": r.instance_id,
                    "class_id": r.class_id,
                    "family": r.family,
                    "split": r.split,
                    "rotation": r.rotation,
                    "scale": r.scale,
                    "open_pixels": r.mask.sum(),
                })
            })
            .collect();
        self.write_json("dataset.json", json!({ "n": self.cfg.grid.n, "spec": self.cfg.dataset, "records": entries }))?;
        Ok(())
    }

    pub(super) fn simulate(&self) -> Result<()> {
        let cfg = &self.cfg;
        let source = cfg.build_source(cfg.source.kind)?;
        let sim = &cfg.simulate;
        let spec = AcquisitionSpec { n_events: sim.n_events, set_size: sim.set_size, transmission: sim.transmission };
        let set = acquire_set(&source.illumination()?, &cfg.grid, &cfg.simulate_mask()?, &cfg.camera()?, &spec, self.seed())?;
        self.stamp(frames_container(std::slice::from_ref(&set), self.seed())?)?
            .write(self.out.join("frames.bin"))?;
        let totals: Vec<f64> = set.frames.iter().map(|f| f.total()).collect();
        self.write_json(
            "simulate.json",
            json!({
                "source": source.kind.as_str(),
                "n": cfg.grid.n,
                "S": set.len(),
                "frame_totals": totals,
                "total": totals.iter().sum::<f64>(),
                "empirical_mean_field": set.mean_frame(),
            }),
        )?;
        Ok(())
    }

    pub(super) fn fit_pm(&self, path: &Path) -> Result<()> {
        let (grid, ms) = measurements_from(&Container::read(path)?)?;
        let init = self.cfg.calibration.initial.unwrap_or(self.cfg.phasematch);
        let fit = fit_phasematching(&ms, &grid, &init, &self.cfg.calibration.phasematch)?;
        #[derive(Serialize)]
        struct Block {
            phasematch: PhasematchParams,
        }
        let block = toml::to_string(&Block { phasematch: fit.params }).map_err(|e| Error::Format(e.to_string()))?;
        self.write("pm.toml", &(self.tag_line() + &block))?;
        let mut csv = self.csv("iteration,objective");
        for (i, f) in fit.trace.iter().enumerate() {
            let _ = writeln!(csv, "{i},{f}");
        }
        self.write("fit_trace.csv", &csv)?;
        self.write_json("fit.json", json!({ "initial": init, "fit": fit }))?;
        Ok(())
    }

    pub(super) fn calibrate_gain(&self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let hist = Histogram::parse(&text)?;
        let fit = fit_gain(&hist, &self.cfg.calibration.gain)?;
        self.write("gain.toml", &format!("{}[camera]\nem_gain = {}\n", self.tag_line(), fit.g))?;
        self.write_json("gain.json", json!({ "samples": hist.total(), "fit": fit }))?;
        Ok(())
    }

    fn save(&self, trainer: &CatTrainer, name: &str) -> Result<()> {
        let (digital_round, physical_round) = trainer.rounds();
        let ck = Checkpoint {
            source: trainer.source.clone(),
            model: trainer.model.clone(),
            rng_state: RngState { seed: self.seed(), digital_round, physical_round },
            config_hash: self.hash.clone(),
        };
        ck.write(self.out.join(name))
    }

    pub(super) fn train(&self) -> Result<()> {
        let cfg = &self.cfg;
        let source = cfg.build_source(cfg.source.kind)?;
        let records = cfg.records()?;
        let mut trainer = CatTrainer::new(source, cfg.camera()?, &records, cfg.train.clone(), self.seed())?;
        self.save(&trainer, "checkpoint_initial.bin")?;
        let trace = trainer.run()?;
        self.save(&trainer, "checkpoint.bin")?;
        self.write("trace.csv", &(self.tag_line() + &trace_csv(&trace)))?;
        let test_acc = if trainer.test.is_empty() { None } else { Some(trainer.test_accuracy(cfg.eval.sets_per_object, 1)?) };
        self.write_json(
            "train.json",
            json!({
                "source": trainer.source.kind.as_str(),
                "epochs": trace.len(),
                "final_loss": trace.last().map(|r| r.loss),
                "final_test_accuracy": test_acc,
                "digital_decrease_fraction": digital_decrease_fraction(&trace),
            }),
        )?;
        Ok(())
    }

    pub(super) fn eval(&self, path: &Path) -> Result<()> {
        let ck = self.checkpoint(path)?;
        let cfg = &self.cfg;
        let test = self.test_records()?;
        let seed = rng::derive_seed(self.seed(), &[tag::EVAL]);
        let cells = eval_surface(
            &ck.source,
            &ck.model,
            &test,
            &cfg.camera()?,
            &cfg.eval.budgets,
            &cfg.eval.shots,
            &cfg.eval_spec(),
            cfg.window(),
            seed,
        )?;
        let mut csv = self.csv("n_events,shots,window_clicks,accuracy,stderr");
        for c in &cells {
            let _ = writeln!(csv, "{},{},{},{},{}", c.n_events, c.shots, c.window_clicks, c.accuracy, c.stderr);
        }
        self.write("surface.csv", &csv)?;
        self.write_json(
            "eval.json",
            json!({
                "source": ck.source.kind.as_str(),
                "checkpoint_config_hash": ck.config_hash,
                "test_objects": test.len(),
                "passes": cfg.eval.passes,
                "cells": cells,
            }),
        )?;
        Ok(())
    }

    pub(super) fn infer(&self, checkpoint: &Path, frames: &Path) -> Result<()> {
        let ck = self.checkpoint(checkpoint)?;
        let sets = frames_from(&Container::read(frames)?)?;
        if let Some(s) = sets.iter().find(|s| s.n != ck.source.grid.n) {
            return Err(Error::Config(format!("frames are {}x{}, checkpoint expects {}", s.n, s.n, ck.source.grid.n)));
        }
        let results: Vec<Value> = sets
            .iter()
            .enumerate()
            .map(|(i, set)| {
                let p = softmax(&forward(set, &ck.model)?);
                Ok(json!({ "set": i, "predicted": argmax(&p), "probabilities": p }))
            })
            .collect::<Result<_>>()?;
        let doc = self.write_json("infer.json", json!({ "checkpoint_config_hash": ck.config_hash, "sets": results }))?;
        // a closed stdout is not an error: the JSON is also on disk
        let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&doc)?);
        Ok(())
    }

    pub(super) fn correlation_audit(&self, before: &Path, after: &Path) -> Result<()> {
        let (b, a) = (self.checkpoint(before)?, self.checkpoint(after)?);
        if b.source.grid != a.source.grid {
            return Err(Error::Config("checkpoints live on different grids".into()));
        }
        let rows = correlation_audit(&b.source, &a.source, &self.test_records()?, self.cfg.train.n_events)?;
        let mut csv = self.csv("instance_id,class_id,before,after");
        for r in &rows {
            let _ = writeln!(csv, "{},{},{},{}", r.instance_id, r.class_id, r.before, r.after);
        }
        self.write("audit.csv", &csv)?;
        let mean = |f: fn(&crate::pipeline::AuditRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len().max(1) as f64;
        let (mb, ma) = (mean(|r| r.before), mean(|r| r.after));
        self.write_json(
            "audit.json",
            json!({ "n_events": self.cfg.train.n_events, "mean_before": mb, "mean_after": ma, "increased": ma > mb, "objects": rows }),
        )?;
        Ok(())
    }

    pub(super) fn loss_sweep(&self, path: &Path) -> Result<()> {
        let ck = self.checkpoint(path)?;
        let ls = &self.cfg.loss_sweep;
        let base = EvalSpec { sets_per_object: ls.sets_per_object, passes: ls.passes, ..self.cfg.eval_spec() };
        let seed = rng::derive_seed(self.seed(), &[tag::EVAL]);
        let rows = loss_sweep(&ck.source, &ck.model, &self.test_records()?, &self.cfg.camera()?, &base, &ls.transmissions, seed)?;
        let mut csv = self.csv("transmission,accuracy,stderr");
        for (t, r) in &rows {
            let _ = writeln!(csv, "{t},{},{}", r.accuracy, r.stderr);
        }
        self.write("loss_sweep.csv", &csv)?;
        let mut by_t: Vec<(f64, f64)> = rows.iter().map(|(t, r)| (*t, r.accuracy)).collect();
        by_t.sort_by(|x, y| y.0.total_cmp(&x.0));
        let non_increasing = by_t.windows(2).all(|w| w[1].1 <= w[0].1 + 0.02);
        let table: Vec<Value> = rows
            .iter()
            .map(|(t, r)| json!({ "transmission": t, "accuracy": r.accuracy, "stderr": r.stderr, "clicks_per_shot": r.clicks_per_shot }))
            .collect();
        self.write_json(
            "loss_sweep.json",
            json!({ "source": ck.source.kind.as_str(), "non_increasing_within_2_points": non_increasing, "rows": table }),
        )?;
        Ok(())
    }
}
