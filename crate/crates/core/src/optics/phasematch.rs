use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted scalars of the sinc phasematching envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasematchParams {
    pub mu00: f64,
    /// Multiplies `q_sx + q_ix`.
    pub alpha_lz: f64,
    /// Multiplies `|q_s - q_i|²`.
    pub delta_lz: f64,
    /// Overall pair-creation scale, including the coupling constant.
    pub amplitude: f64,
}

impl PhasematchParams {
    pub fn new(mu00: f64, alpha_lz: f64, delta_lz: f64, amplitude: f64) -> Result<Self> {
        let pm = Self { mu00, alpha_lz, delta_lz, amplitude };
        pm.validate()?;
        Ok(pm)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu00, self.alpha_lz, self.delta_lz, self.amplitude];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("phasematch parameters must be finite".into()));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter("phasematch amplitude must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.mu00, self.alpha_lz, self.delta_lz, self.amplitude]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { mu00: v[0], alpha_lz: v[1], delta_lz: v[2], amplitude: v[3] }
    }

    /// Argument of the sinc for a signal/idler momentum pair.
    pub fn argument(&self, qs: [f64; 2], qi: [f64; 2]) -> f64 {
        let dx = qs[0] - qi[0];
        let dy = qs[1] - qi[1];
        self.mu00 - self.alpha_lz * (qs[0] + qi[0]) + self.delta_lz * (dx * dx + dy * dy)
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Derivative of [`sinc`].
pub fn sinc_deriv(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0 + x * x * x / 30.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

pub fn phasematch(qs: [f64; 2], qi: [f64; 2], pm: &PhasematchParams) -> f64 {
    sinc(pm.argument(qs, qi))
}

/// Dispersion coefficients of the extraordinary pump wave.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrystalCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

/// Walk-off and curvature coefficients for ordinary/extraordinary indices at
/// crystal angle `theta`.
pub fn phasematch_coeffs(n_o: f64, n_e: f64, theta: f64) -> Result<CrystalCoeffs> {
    if !(n_o.is_finite() && n_e.is_finite() && n_o > 0.0 && n_e > 0.0) {
        return Err(Error::InvalidParameter(format!("refractive indices must be positive, got n_o={n_o}, n_e={n_e}")));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::InvalidParameter(format!("theta must lie in [0, pi/2], got {theta}")));
    }
    let (s, c) = theta.sin_cos();
    let denom = n_o * n_o * s * s + n_e * n_e * c * c;
    let root = denom.sqrt();
    Ok(CrystalCoeffs {
        alpha: (n_o * n_o - n_e * n_e) * s * c / denom,
        beta: n_o * n_e / denom,
        gamma: n_o / root,
        eta: n_o * n_e / root,
    })
}
