//! Straight-through estimator for the photon sampling step.

use std::f64::consts::TAU;

use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::optics::PixelGrid;
use crate::sensing::{acquire_batch, AcquisitionSpec, CameraModel, FrameSet, Illumination, ObjectMask};
use crate::tensor::Tensor;

/// Sampled mini-batch plus its graph node of shape `[B·S, n²]`.
#[derive(Debug)]
pub struct SteBatch {
    pub frames: NodeId,
    pub sets: Vec<FrameSet>,
}

/// Records `sets` as a node whose backward pass hands `mean` the average of
/// the incoming frame gradients over all `B·S` frames.
pub fn ste_attach(g: &mut Graph, mean: NodeId, sets: &[FrameSet]) -> Result<NodeId> {
    let pixels = g.value(mean).len();
    let mut data = Vec::new();
    let mut rows = 0;
    for set in sets {
        for f in &set.frames {
            if f.counts.len() != pixels {
                return Err(Error::Dimension(format!("frame has {} pixels, mean field {pixels}", f.counts.len())));
            }
            data.extend_from_slice(&f.counts);
            rows += 1;
        }
    }
    Ok(g.custom(
        vec![mean],
        Tensor::matrix(rows, pixels, data),
        Box::new(move |go, p, _| {
            let mut acc = vec![0.0; pixels];
            for row in go.data().chunks(pixels) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let k = rows.max(1) as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            vec![Some(Tensor::new(p[0].shape().to_vec(), acc))]
        }),
    ))
}

/// Detached forward sampling of `masks.len() × spec.set_size` frames with the
/// straight-through backward rule.
#[allow(clippy::too_many_arguments)]
pub fn ste_sample(
    g: &mut Graph,
    mean: NodeId,
    source: &Illumination,
    grid: &PixelGrid,
    masks: &[&ObjectMask],
    cam: &CameraModel,
    spec: &AcquisitionSpec,
    seed: u64,
) -> Result<SteBatch> {
    let sets = acquire_batch(source, grid, masks, cam, spec, seed)?;
    let frames = ste_attach(g, mean, &sets)?;
    Ok(SteBatch { frames, sets })
}

/// Rounds phases to the nearest of `levels` equally spaced values in
/// `[0, 2π)`.
pub fn quantize_phase(phase: &[f64], levels: usize) -> Vec<f64> {
    let step = TAU / levels as f64;
    phase
        .iter()
        .map(|p| {
            let k = (p.rem_euclid(TAU) / step).round() as usize % levels;
            k as f64 * step
        })
        .collect()
}

impl Graph {
    /// Identity in the forward pass; the backward pass scales the incoming
    /// gradient element-wise by `weights`. Stands in for the derivative of
    /// stochastic thinning, whose expectation is `weights ⊙ input`.
    pub fn thinning_gate(&mut self, a: NodeId, weights: Tensor) -> NodeId {
        assert_eq!(self.value(a).len(), weights.len(), "thinning weights must match the input");
        let v = self.value(a).clone();
        self.custom(
            vec![a],
            v,
            Box::new(move |go, _, _| {
                let g = go.data().iter().zip(weights.data()).map(|(g, w)| g * w).collect();
                vec![Some(Tensor::new(go.shape().to_vec(), g))]
            }),
        )
    }

    /// Phase quantization with an identity gradient.
    pub fn quantize_ste(&mut self, a: NodeId, levels: usize) -> NodeId {
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), quantize_phase(v.data(), levels));
        self.custom(vec![a], out, Box::new(|go, _, _| vec![Some(go.clone())]))
    }
}
