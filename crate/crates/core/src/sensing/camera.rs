use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};

/// EMCCD response and per-pixel background click statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub em_gain: f64,
    pub electrons_per_count: f64,
    pub quantum_efficiency: f64,
    /// Probability of `k` background clicks per pixel per shot, `k = 0..=k_max`.
    pub background_pmf: Vec<f64>,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            em_gain: 1000.0,
            electrons_per_count: 1.85,
            quantum_efficiency: 0.905,
            background_pmf: Self::geometric_with_mean(0.05, 5),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.em_gain.is_finite() && self.em_gain > 0.0) {
            return Err(Error::InvalidParameter(format!("EM gain must be > 0, got {}", self.em_gain)));
        }
        if !(self.electrons_per_count.is_finite() && self.electrons_per_count > 0.0) {
            return Err(Error::InvalidParameter("electrons per count must be > 0".into()));
        }
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return Err(Error::InvalidParameter("quantum efficiency must lie in (0, 1]".into()));
        }
        if self.background_pmf.is_empty() || self.background_pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("background pmf entries must be finite and >= 0".into()));
        }
        let total: f64 = self.background_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("background pmf sums to {total}")));
        }
        Ok(())
    }

    /// Noise-free camera: background is a point mass at zero.
    pub fn noiseless() -> Self {
        Self { background_pmf: vec![1.0], ..Self::default() }
    }

    pub fn with_background(mut self, pmf: Vec<f64>) -> Result<Self> {
        self.background_pmf = pmf;
        self.validate()?;
        Ok(self)
    }

    pub fn background_mean(&self) -> f64 {
        self.background_pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// `p_k ∝ r^k` on `0..=k_max`.
    pub fn truncated_geometric(ratio: f64, k_max: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..=k_max).map(|k| ratio.powi(k as i32)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }

    /// Truncated geometric pmf whose mean is `mean`, found by bisection on
    /// the ratio.
    pub fn geometric_with_mean(mean: f64, k_max: usize) -> Vec<f64> {
        let mean_of = |r: f64| -> f64 {
            Self::truncated_geometric(r, k_max).iter().enumerate().map(|(k, p)| k as f64 * p).sum()
        };
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_of(mid) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::truncated_geometric(0.5 * (lo + hi), k_max)
    }
}

/// Converts a raw EMCCD frame to photon estimates:
/// `max(raw − bg, 0) · e_D / (η · g)`.
pub fn process_raw_frame(n: usize, raw: &[f64], bg_mean: &[f64], cam: &CameraModel) -> Result<Frame> {
    if raw.len() != n * n || bg_mean.len() != n * n {
        return Err(Error::Dimension(format!("raw and background frames must hold {} pixels", n * n)));
    }
    if !(cam.em_gain > 0.0 && cam.quantum_efficiency > 0.0) {
        return Err(Error::InvalidParameter("gain and quantum efficiency must be > 0".into()));
    }
    let scale = cam.electrons_per_count / (cam.quantum_efficiency * cam.em_gain);
    let counts = raw
        .iter()
        .zip(bg_mean)
        .map(|(r, b)| (r - b).max(0.0) * scale)
        .collect();
    Frame::new(n, counts)
}
