use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::source::{pair_transmission, Source};
use crate::datasets::{augment_translate, ObjectRecord};
use crate::error::{Error, Result};
use crate::model::{argmax, forward, TransformerParams};
use crate::optics::PixelGrid;
use crate::rng::{self, tag};
use crate::sensing::{acquire_batch, AcquisitionSpec, CameraModel, FrameSet, Illumination, ObjectMask};

/// How held-out objects are imaged and scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub n_events: usize,
    pub set_size: usize,
    pub sets_per_object: usize,
    /// Independently seeded augmentation passes averaged together.
    pub passes: usize,
    pub augment_shift: usize,
    pub transmission: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Monte Carlo standard error of `accuracy`.
    pub stderr: f64,
    pub n_sets: usize,
    /// Mean clicks per frame, all pixels.
    pub clicks_per_shot: f64,
}

fn classify(sets: &[FrameSet], params: &TransformerParams) -> Result<Vec<usize>> {
    sets.par_iter().map(|s| forward(s, params).map(|z| argmax(&z))).collect()
}

/// Accuracy over `passes × objects × sets_per_object` sets. Each pass draws
/// fresh translations and frames from its own stream; the pass accuracies
/// are averaged.
pub fn evaluate(
    illum: &Illumination,
    grid: &PixelGrid,
    params: &TransformerParams,
    records: &[ObjectRecord],
    cam: &CameraModel,
    spec: &EvalSpec,
    seed: u64,
) -> Result<EvalResult> {
    if records.is_empty() || spec.passes == 0 || spec.sets_per_object == 0 || spec.set_size == 0 {
        return Err(Error::Empty("evaluation needs objects, passes, sets and frames".into()));
    }
    let acq = AcquisitionSpec {
        n_events: spec.n_events,
        set_size: spec.sets_per_object * spec.set_size,
        transmission: spec.transmission,
    };
    let mut pass_acc = Vec::with_capacity(spec.passes);
    let (mut clicks, mut frames) = (0.0, 0usize);
    for p in 0..spec.passes as u64 {
        let masks: Vec<ObjectMask> = records
            .iter()
            .enumerate()
            .map(|(o, r)| augment_translate(&r.mask, spec.augment_shift, &mut rng::derive(seed, &[tag::AUGMENT, p, o as u64])))
            .collect();
        let refs: Vec<&ObjectMask> = masks.iter().collect();
        let batches = acquire_batch(illum, grid, &refs, cam, &acq, rng::derive_seed(seed, &[tag::EVAL, p]))?;
        let mut sets = Vec::new();
        let mut labels = Vec::new();
        for (obj, batch) in records.iter().zip(batches) {
            for f in &batch.frames {
                clicks += f.total();
                frames += 1;
            }
            for chunk in batch.frames.chunks(spec.set_size) {
                sets.push(FrameSet { n: grid.n, frames: chunk.to_vec() });
                labels.push(obj.class_id);
            }
        }
        let pred = classify(&sets, params)?;
        let hits = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        pass_acc.push(hits as f64 / labels.len() as f64);
    }
    let k = pass_acc.len() as f64;
    let accuracy = pass_acc.iter().sum::<f64>() / k;
    let n_sets = records.len() * spec.sets_per_object * spec.passes;
    let stderr = if pass_acc.len() > 1 {
        let var = pass_acc.iter().map(|a| (a - accuracy).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        (accuracy * (1.0 - accuracy) / n_sets as f64).sqrt()
    };
    Ok(EvalResult { accuracy, stderr, n_sets, clicks_per_shot: clicks / frames as f64 })
}

/// One cell of the (photon budget × shots) accuracy surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub n_events: usize,
    pub shots: usize,
    /// Mean clicks per shot inside the central object window.
    pub window_clicks: f64,
    pub accuracy: f64,
    pub stderr: f64,
}

/// Mean clicks per shot inside the central `window×window` region, from the
/// mean field and mask-free acquisition.
pub fn window_clicks(source: &Source, n_events: usize, window: usize) -> Result<f64> {
    let mf = source.mean_field()?;
    let n = mf.n;
    if window > n {
        return Err(Error::InvalidParameter(format!("window {window} exceeds frame side {n}")));
    }
    let off = (n - window) / 2;
    let mut inside = 0.0;
    for r in off..off + window {
        for c in off..off + window {
            inside += mf.values[r * n + c];
        }
    }
    Ok(2.0 * n_events as f64 * inside / mf.total())
}

/// Accuracy for every `(budget, shots)` pair; each cell draws from a stream
/// derived from its own coordinates.
#[allow(clippy::too_many_arguments)]
pub fn eval_surface(
    source: &Source,
    params: &TransformerParams,
    records: &[ObjectRecord],
    cam: &CameraModel,
    budgets: &[usize],
    shots: &[usize],
    base: &EvalSpec,
    window: usize,
    seed: u64,
) -> Result<Vec<SurfaceCell>> {
    let illum = source.illumination()?;
    let cells: Vec<(usize, usize)> = budgets.iter().flat_map(|&b| shots.iter().map(move |&s| (b, s))).collect();
    cells
        .par_iter()
        .map(|&(n_events, s)| {
            let spec = EvalSpec { n_events, set_size: s, ..*base };
            let cell_seed = rng::derive_seed(seed, &[n_events as u64, s as u64]);
            let r = evaluate(&illum, &source.grid, params, records, cam, &spec, cell_seed)?;
            Ok(SurfaceCell {
                n_events,
                shots: s,
                window_clicks: window_clicks(source, n_events, window)?,
                accuracy: r.accuracy,
                stderr: r.stderr,
            })
        })
        .collect()
}

/// Accuracy under uniform photon loss. Every transmission level reuses the
/// same seed, so `t = 1` reproduces the lossless evaluation exactly.
#[allow(clippy::too_many_arguments)]
pub fn loss_sweep(
    source: &Source,
    params: &TransformerParams,
    records: &[ObjectRecord],
    cam: &CameraModel,
    base: &EvalSpec,
    transmissions: &[f64],
    seed: u64,
) -> Result<Vec<(f64, EvalResult)>> {
    if let Some(t) = transmissions.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParameter(format!("transmission {t} outside [0, 1]")));
    }
    let illum = source.illumination()?;
    transmissions
        .iter()
        .map(|&t| {
            let spec = EvalSpec { transmission: t, ..*base };
            Ok((t, evaluate(&illum, &source.grid, params, records, cam, &spec, seed)?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub instance_id: usize,
    pub class_id: usize,
    pub before: f64,
    pub after: f64,
}

/// Per-object probability of at least one fully transmitted pair, before and
/// after training.
pub fn correlation_audit(before: &Source, after: &Source, records: &[ObjectRecord], n_events: usize) -> Result<Vec<AuditRow>> {
    if before.grid != after.grid {
        return Err(Error::Dimension("sources live on different grids".into()));
    }
    let (jb, ja) = (before.jpd()?, after.jpd()?);
    records
        .iter()
        .map(|r| {
            if r.mask.n != before.grid.n {
                return Err(Error::Dimension(format!("object {} does not match the grid", r.instance_id)));
            }
            Ok(AuditRow {
                instance_id: r.instance_id,
                class_id: r.class_id,
                before: pair_transmission(&jb, &r.mask.transmittance, n_events)?,
                after: pair_transmission(&ja, &r.mask.transmittance, n_events)?,
            })
        })
        .collect()
}
