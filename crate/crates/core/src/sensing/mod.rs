//! Stochastic camera frames from a source model.

mod camera;
mod sampling;

pub use camera::{process_raw_frame, CameraModel};
pub use sampling::{
    acquire_batch, acquire_set, add_background, apply_mask, apply_transmission, coherent_frame, events_to_frame,
    sample_pairs, AcquisitionSpec, EventIndexer, Illumination, PairSampler,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `n×n` exposure. Simulated frames hold integer click counts; processed
/// frames hold real photon estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub n: usize,
    pub counts: Vec<f64>,
}

impl Frame {
    pub fn new(n: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != n * n {
            return Err(Error::Dimension(format!("frame must hold {} pixels, got {}", n * n, counts.len())));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidParameter("frame counts must be finite and >= 0".into()));
        }
        Ok(Self { n, counts })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, counts: vec![0.0; n * n] }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Sum over the centered `window×window` region.
    pub fn window_total(&self, window: usize) -> f64 {
        let w = window.min(self.n);
        let off = (self.n - w) / 2;
        (off..off + w)
            .map(|r| self.counts[r * self.n + off..r * self.n + off + w].iter().sum::<f64>())
            .sum()
    }

    fn integer_count(&self, p: usize) -> Result<u64> {
        let c = self.counts[p];
        if c.fract() != 0.0 {
            return Err(Error::InvalidParameter(format!("pixel {p} holds non-integer count {c}")));
        }
        Ok(c as u64)
    }
}

/// Unordered collection of frames of one object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    pub n: usize,
    pub frames: Vec<Frame>,
}

impl FrameSet {
    pub fn new(n: usize, frames: Vec<Frame>) -> Result<Self> {
        if let Some(f) = frames.iter().find(|f| f.n != n) {
            return Err(Error::Dimension(format!("frame of side {} in a set of side {n}", f.n)));
        }
        Ok(Self { n, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames stacked row-wise into an `S × n²` buffer.
    pub fn stacked(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.counts.iter().copied()).collect()
    }

    pub fn mean_frame(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n * self.n];
        for f in &self.frames {
            for (a, c) in acc.iter_mut().zip(&f.counts) {
                *a += c;
            }
        }
        let k = self.frames.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }
}

/// Per-pixel transmittance of an absorptive object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub n: usize,
    pub transmittance: Vec<f64>,
}

impl ObjectMask {
    pub fn new(n: usize, transmittance: Vec<f64>) -> Result<Self> {
        if transmittance.len() != n * n {
            return Err(Error::Dimension(format!("mask must hold {} pixels", n * n)));
        }
        if transmittance.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidParameter("mask transmittance must lie in [0, 1]".into()));
        }
        Ok(Self { n, transmittance })
    }

    pub fn uniform(n: usize, t: f64) -> Result<Self> {
        Self::new(n, vec![t; n * n])
    }

    pub fn open(n: usize) -> Self {
        Self { n, transmittance: vec![1.0; n * n] }
    }

    pub fn sum(&self) -> f64 {
        self.transmittance.iter().sum()
    }
}
