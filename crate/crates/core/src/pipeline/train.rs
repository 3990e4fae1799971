use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalSpec};
use super::source::Source;
use crate::datasets::{augment_translate, frame_sampler_without_replacement, object_sampler_with_replacement, ObjectRecord, Split};
use crate::error::{Error, Result};
use crate::grad::{
    checksum_f64, run_alternating, ste_sample, AlternatingModel, EpochRecord, EpochStats, Graph, OptimizerState,
    ParamGroup, ScheduleConfig,
};
use crate::model::{argmax, batch_loss, forward_graph, TransformerConfig, TransformerParams};
use crate::rng::{self, tag};
use crate::sensing::{acquire_batch, AcquisitionSpec, CameraModel, FrameSet, ObjectMask};
use crate::tensor::Tensor;

/// Hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d::n_events")]
    pub n_events: usize,
    #[serde(default = "d::set_size")]
    pub set_size: usize,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    /// Mini-batches per physical epoch.
    #[serde(default = "d::physical_steps")]
    pub physical_steps: usize,
    /// Frames simulated per training object per digital epoch.
    #[serde(default = "d::pool_frames")]
    pub pool_frames: usize,
    #[serde(default = "d::lr_physical")]
    pub lr_physical: f64,
    #[serde(default = "d::lr_digital")]
    pub lr_digital: f64,
    #[serde(default = "d::cycles")]
    pub cycles: usize,
    #[serde(default = "d::one")]
    pub physical_epochs: usize,
    #[serde(default = "d::five")]
    pub digital_epochs: usize,
    #[serde(default = "d::augment_shift")]
    pub augment_shift: usize,
    /// Sets per test object when scoring each epoch; 0 disables it.
    #[serde(default = "d::test_sets")]
    pub test_sets_per_object: usize,
    #[serde(default = "d::d_model")]
    pub d_model: usize,
    #[serde(default = "d::n_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub timing: bool,
}

mod d {
    pub fn n_events() -> usize {
        20
    }
    pub fn set_size() -> usize {
        10
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn physical_steps() -> usize {
        20
    }
    pub fn pool_frames() -> usize {
        200
    }
    pub fn lr_physical() -> f64 {
        0.05
    }
    pub fn lr_digital() -> f64 {
        1e-4
    }
    pub fn cycles() -> usize {
        10
    }
    pub fn one() -> usize {
        1
    }
    pub fn five() -> usize {
        5
    }
    pub fn augment_shift() -> usize {
        1
    }
    pub fn test_sets() -> usize {
        10
    }
    pub fn d_model() -> usize {
        64
    }
    pub fn n_heads() -> usize {
        4
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            physical_epochs: self.physical_epochs,
            digital_epochs: self.digital_epochs,
            total_cycles: self.cycles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        if self.set_size == 0 || self.batch_size == 0 || self.physical_steps == 0 {
            return Err(Error::InvalidParameter("set size, batch size and physical steps must be positive".into()));
        }
        if self.pool_frames < self.set_size {
            return Err(Error::InvalidParameter(format!(
                "frame pool {} is smaller than the set size {}",
                self.pool_frames, self.set_size
            )));
        }
        OptimizerState::sgd(self.lr_physical)?;
        OptimizerState::adam(self.lr_digital)?;
        Ok(())
    }

    pub fn model_config(&self, input_dim: usize, n_classes: usize) -> TransformerConfig {
        TransformerConfig { d_model: self.d_model, n_heads: self.n_heads, ..TransformerConfig::new(input_dim, n_classes) }
    }
}

/// Illumination and classifier trained together with the alternating
/// schedule (or digital-only when the source is fixed).
pub struct CatTrainer {
    pub source: Source,
    pub model: TransformerParams,
    pub cam: CameraModel,
    pub train: Vec<ObjectRecord>,
    pub test: Vec<ObjectRecord>,
    pub cfg: TrainConfig,
    pub seed: u64,
    physical_opt: OptimizerState,
    digital_opt: OptimizerState,
    digital_round: u64,
    physical_round: u64,
    pool: Vec<FrameSet>,
}

struct StepOutcome {
    loss: f64,
    correct: usize,
    skipped: bool,
}

impl CatTrainer {
    pub fn new(source: Source, cam: CameraModel, records: &[ObjectRecord], cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cam.validate()?;
        let train: Vec<ObjectRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
        let test: Vec<ObjectRecord> = records.iter().filter(|r| r.split == Split::Test).cloned().collect();
        if train.is_empty() {
            return Err(Error::Empty("dataset has no training objects".into()));
        }
        if let Some(r) = records.iter().find(|r| r.mask.n != source.grid.n) {
            return Err(Error::Dimension(format!("object {} does not match the grid", r.instance_id)));
        }
        let n_classes = records.iter().map(|r| r.class_id).max().unwrap_or(0) + 1;
        let config = cfg.model_config(source.grid.n_pixels(), n_classes);
        let model = TransformerParams::init(config, &mut rng::derive(seed, &[tag::INIT]))?;
        Ok(Self {
            physical_opt: OptimizerState::sgd(cfg.lr_physical)?,
            digital_opt: OptimizerState::adam(cfg.lr_digital)?,
            source,
            model,
            cam,
            train,
            test,
            cfg,
            seed,
            digital_round: 0,
            physical_round: 0,
            pool: Vec::new(),
        })
    }

    fn acq(&self, set_size: usize) -> AcquisitionSpec {
        AcquisitionSpec::new(self.cfg.n_events, set_size)
    }

    fn shifted_masks(&self, picks: &[usize], path: &[u64]) -> Vec<ObjectMask> {
        picks
            .iter()
            .enumerate()
            .map(|(k, &o)| {
                let mut p = path.to_vec();
                p.push(k as u64);
                augment_translate(&self.train[o].mask, self.cfg.augment_shift, &mut rng::derive(self.seed, &p))
            })
            .collect()
    }

    /// One Adam step on a batch of frame sets.
    fn digital_step(&mut self, sets: &[FrameSet], labels: &[usize]) -> Result<StepOutcome> {
        let s = self.cfg.set_size;
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let data: Vec<f64> = sets.iter().flat_map(|x| x.stacked()).collect();
        let frames = g.constant(Tensor::matrix(sets.len() * s, self.source.grid.n_pixels(), data));
        let logits = forward_graph(&mut g, &bound, frames, sets.len(), s)?;
        let loss = batch_loss(&mut g, logits, labels)?;
        g.backward(loss)?;
        let correct = count_correct(g.value(logits), labels);
        let grads: Vec<Tensor> = bound.ids.iter().map(|&id| g.grad_or_zeros(id)).collect();
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let report = self.digital_opt.step(&mut self.model.tensors_mut(), &grad_refs)?;
        Ok(StepOutcome { loss: g.value(loss).item(), correct, skipped: report.skipped_nonfinite })
    }

    /// Frames of every training object under the current illumination. The
    /// pool is measured once per cycle, after the physical update, and reused
    /// by that cycle's digital epochs.
    fn refresh_pool(&mut self, cycle: u64) -> Result<()> {
        let picks: Vec<usize> = (0..self.train.len()).collect();
        let masks = self.shifted_masks(&picks, &[tag::AUGMENT, 0, cycle]);
        let mask_refs: Vec<&ObjectMask> = masks.iter().collect();
        let illum = self.source.illumination()?;
        self.pool = acquire_batch(
            &illum,
            &self.source.grid,
            &mask_refs,
            &self.cam,
            &self.acq(self.cfg.pool_frames),
            rng::derive_seed(self.seed, &[tag::POOL, cycle]),
        )?;
        Ok(())
    }

    fn digital_epoch(&mut self) -> Result<(f64, f64, usize)> {
        let round = self.digital_round;
        self.digital_round += 1;
        if round % self.cfg.digital_epochs as u64 == 0 || self.pool.is_empty() {
            self.refresh_pool(round / self.cfg.digital_epochs as u64)?;
        }
        let pools = std::mem::take(&mut self.pool);
        let mut r = rng::derive(self.seed, &[tag::OBJECTS, 0, round]);
        let mut items: Vec<(FrameSet, usize)> = Vec::new();
        for (o, pool) in pools.iter().enumerate() {
            for idx in frame_sampler_without_replacement(pool.len(), self.cfg.set_size, &mut r)? {
                let frames = idx.iter().map(|&k| pool.frames[k].clone()).collect();
                items.push((FrameSet { n: pool.n, frames }, self.train[o].class_id));
            }
        }
        items.shuffle(&mut r);
        self.pool = pools;
        let (mut loss, mut correct, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in items.chunks(self.cfg.batch_size) {
            let sets: Vec<FrameSet> = chunk.iter().map(|(s, _)| s.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
            let out = self.digital_step(&sets, &labels)?;
            loss += out.loss * labels.len() as f64;
            correct += out.correct;
            skipped += out.skipped as usize;
        }
        Ok((loss / items.len() as f64, correct as f64 / items.len() as f64, skipped))
    }

    fn physical_epoch(&mut self) -> Result<(f64, f64, usize)> {
        let round = self.physical_round;
        self.physical_round += 1;
        let b = self.cfg.batch_size;
        let (mut loss, mut correct, mut skipped) = (0.0, 0usize, 0usize);
        for step in 0..self.cfg.physical_steps as u64 {
            let picks = object_sampler_with_replacement(
                self.train.len(),
                b,
                &mut rng::derive(self.seed, &[tag::OBJECTS, 1, round, step]),
            )?;
            let masks = self.shifted_masks(&picks, &[tag::AUGMENT, 1, round, step]);
            let mask_refs: Vec<&ObjectMask> = masks.iter().collect();
            let labels: Vec<usize> = picks.iter().map(|&o| self.train[o].class_id).collect();

            let mut g = Graph::new();
            let (leaf, mean) = self.source.mean_field_node(&mut g)?;
            let target = 2.0 * self.cfg.n_events as f64;
            let scaled = g.normalize_to(mean, target);
            let illum = self.source.illumination()?;
            let batch = ste_sample(
                &mut g,
                scaled,
                &illum,
                &self.source.grid,
                &mask_refs,
                &self.cam,
                &self.acq(self.cfg.set_size),
                rng::derive_seed(self.seed, &[tag::EVENTS, round, step]),
            )?;
            // photons only reach the camera through the object
            let pixels = self.source.grid.n_pixels();
            let weights: Vec<f64> = masks
                .iter()
                .flat_map(|m| std::iter::repeat(&m.transmittance).take(self.cfg.set_size).flatten().copied())
                .collect();
            let frames = g.thinning_gate(batch.frames, Tensor::matrix(b * self.cfg.set_size, pixels, weights));
            let bound = self.model.bind(&mut g, false);
            let logits = forward_graph(&mut g, &bound, frames, b, self.cfg.set_size)?;
            let l = batch_loss(&mut g, logits, &labels)?;
            g.backward(l)?;
            correct += count_correct(g.value(logits), &labels);
            loss += g.value(l).item();
            let grad = g.grad_or_zeros(leaf);
            let mut params = Tensor::vector(self.source.physical());
            let report = self.physical_opt.step(&mut [&mut params], &[&grad])?;
            skipped += report.skipped_nonfinite as usize;
            if report.applied {
                self.source.set_physical(params.data())?;
            }
        }
        let steps = self.cfg.physical_steps as f64;
        Ok((loss / steps, correct as f64 / (steps * b as f64), skipped))
    }

    /// `(digital, physical)` rounds completed so far.
    pub fn rounds(&self) -> (u64, u64) {
        (self.digital_round, self.physical_round)
    }

    /// Accuracy on the held-out objects with a fixed evaluation stream.
    pub fn test_accuracy(&self, sets_per_object: usize, passes: usize) -> Result<f64> {
        let spec = EvalSpec {
            n_events: self.cfg.n_events,
            set_size: self.cfg.set_size,
            sets_per_object,
            passes,
            augment_shift: self.cfg.augment_shift,
            transmission: 1.0,
        };
        let illum = self.source.illumination()?;
        let seed = rng::derive_seed(self.seed, &[tag::EVAL]);
        Ok(evaluate(&illum, &self.source.grid, &self.model, &self.test, &self.cam, &spec, seed)?.accuracy)
    }

    /// Full run: the alternating schedule for a trainable source, otherwise
    /// the same number of digital epochs on their own.
    pub fn run(&mut self) -> Result<Vec<EpochRecord>> {
        let schedule = self.cfg.schedule();
        if self.source.kind.trainable() {
            let timing = self.cfg.timing;
            return run_alternating(self, &schedule, timing);
        }
        let mut trace = Vec::new();
        for epoch in 0..schedule.total_cycles * schedule.digital_epochs {
            let before = self.source.checksum();
            let start = std::time::Instant::now();
            let stats = self.run_epoch(epoch, ParamGroup::Digital)?;
            debug_assert_eq!(before, self.source.checksum());
            trace.push(EpochRecord {
                epoch,
                cycle: epoch / schedule.digital_epochs,
                group: ParamGroup::Digital,
                loss: stats.loss,
                train_acc: stats.train_acc,
                test_acc: stats.test_acc,
                skipped_steps: stats.skipped_steps,
                seconds: if self.cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
            });
        }
        Ok(trace)
    }
}

impl AlternatingModel for CatTrainer {
    fn run_epoch(&mut self, _epoch: usize, group: ParamGroup) -> Result<EpochStats> {
        let (loss, train_acc, skipped_steps) = match group {
            ParamGroup::Physical => self.physical_epoch()?,
            ParamGroup::Digital => self.digital_epoch()?,
        };
        let test_acc = if self.cfg.test_sets_per_object > 0 && !self.test.is_empty() {
            Some(self.test_accuracy(self.cfg.test_sets_per_object, 1)?)
        } else {
            None
        };
        Ok(EpochStats { loss, train_acc, test_acc, skipped_steps })
    }

    fn checksum(&self, group: ParamGroup) -> u64 {
        match group {
            ParamGroup::Physical => self.source.checksum(),
            ParamGroup::Digital => checksum_f64(self.model.tensors().into_iter().flat_map(|t| t.data())),
        }
    }
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.len() / labels.len().max(1);
    logits.data().chunks(k).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}
