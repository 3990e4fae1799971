//! Biphoton source model.
//!
//! A spatial light modulator shapes the pump's angular spectrum, the crystal
//! imposes a sinc phasematching envelope, and together they fix the pair
//! creation Green's function `S`. Mean field, photon covariance and the joint
//! pair distribution all follow from `S` in closed form.

mod forward;
mod greens;
mod phasematch;
mod pump;
mod stats;

pub use forward::{spdc_mean_field, spdc_mean_field_jacobian, spdc_mean_field_vjp};
pub use greens::{build_greens, GreenPair};
pub use phasematch::{phasematch, phasematch_coeffs, sinc, sinc_deriv, CrystalCoeffs, PhasematchParams};
pub use pump::{
    far_field_adjoint, far_field_from_slm, pump_spectrum_adjoint, pump_spectrum_from_slm, slm_field, PumpSpectrum, SlmPhase,
};
pub use stats::{
    biphoton_jpd, covariance, mean_field, pair_count, pair_from_index, pair_index, CovarianceMatrix,
    JointPairDistribution, MeanField,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square camera grid in transverse-momentum space.
///
/// Pixel `p = row * n + col` sits at `q = ((col - center) dq, (row - center) dq)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelGrid {
    pub n: usize,
    #[serde(default = "default_dq")]
    pub dq: f64,
}

fn default_dq() -> f64 {
    1.0
}

impl PixelGrid {
    pub fn new(n: usize, dq: f64) -> Result<Self> {
        let grid = Self { n, dq };
        grid.validate()?;
        Ok(grid)
    }

    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs n >= 2, got {}", self.n)));
        }
        if !(self.dq > 0.0 && self.dq.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid needs dq > 0, got {}", self.dq)));
        }
        Ok(())
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }

    pub fn n_pixels(&self) -> usize {
        self.n * self.n
    }

    /// Side length of the pump sum-coordinate lattice.
    pub fn sum_side(&self) -> usize {
        2 * self.n - 1
    }

    /// Momentum of a flattened pixel index.
    pub fn q(&self, pixel: usize) -> [f64; 2] {
        let c = self.center() as f64;
        let (row, col) = (pixel / self.n, pixel % self.n);
        [(col as f64 - c) * self.dq, (row as f64 - c) * self.dq]
    }

    /// Flattened index on the `(2n-1)²` sum lattice holding `q_a + q_b`.
    pub fn sum_index(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = (a / self.n, a % self.n);
        let (rb, cb) = (b / self.n, b % self.n);
        (ra + rb) * self.sum_side() + (ca + cb)
    }

    /// Index of `q = 0` on the sum lattice.
    pub fn sum_origin(&self) -> usize {
        let c2 = 2 * self.center();
        c2 * self.sum_side() + c2
    }
}
