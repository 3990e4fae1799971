use num_complex::Complex64;

use super::{phasematch, PhasematchParams, PixelGrid, PumpSpectrum};
use crate::error::{Error, Result};

/// The `(C, S)` pair of a Gaussian two-mode-squeezing transformation over
/// `n²` pixel modes. Both matrices are dense and row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenPair {
    pub n_modes: usize,
    pub c: Vec<Complex64>,
    pub s: Vec<Complex64>,
}

impl GreenPair {
    /// Low-gain pair with `C = I`.
    pub fn from_s(n_modes: usize, s: Vec<Complex64>) -> Result<Self> {
        if s.len() != n_modes * n_modes {
            return Err(Error::Dimension(format!("S must be {n_modes}x{n_modes}")));
        }
        let mut c = vec![Complex64::new(0.0, 0.0); n_modes * n_modes];
        for i in 0..n_modes {
            c[i * n_modes + i] = Complex64::new(1.0, 0.0);
        }
        Ok(Self { n_modes, c, s })
    }

    pub fn with_c(n_modes: usize, c: Vec<Complex64>, s: Vec<Complex64>) -> Result<Self> {
        if c.len() != n_modes * n_modes || s.len() != n_modes * n_modes {
            return Err(Error::Dimension(format!("C and S must be {n_modes}x{n_modes}")));
        }
        Ok(Self { n_modes, c, s })
    }

    pub fn s_at(&self, i: usize, j: usize) -> Complex64 {
        self.s[i * self.n_modes + j]
    }

    /// Largest `|S_ij - S_ji|` relative to the largest `|S_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n_modes;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                scale = scale.max(self.s[i * n + j].norm());
                worst = worst.max((self.s[i * n + j] - self.s[j * n + i]).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn is_identity_c(&self) -> bool {
        let n = self.n_modes;
        self.c.iter().enumerate().all(|(k, v)| {
            let target = if k / n == k % n { 1.0 } else { 0.0 };
            v.re == target && v.im == 0.0
        })
    }
}

/// `S_ij = amplitude · ν(q_i + q_j) · ξ(q_i, q_j)`, `C = I`.
pub fn build_greens(nu: &PumpSpectrum, pm: &PhasematchParams, grid: &PixelGrid) -> Result<GreenPair> {
    grid.validate()?;
    pm.validate()?;
    if nu.side != grid.sum_side() {
        return Err(Error::Dimension(format!(
            "pump lattice side {} does not match grid sum side {}",
            nu.side,
            grid.sum_side()
        )));
    }
    let modes = grid.n_pixels();
    let mut s = vec![Complex64::new(0.0, 0.0); modes * modes];
    for i in 0..modes {
        let qi = grid.q(i);
        for j in i..modes {
            let v = nu.values[grid.sum_index(i, j)];
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            let entry = v * (pm.amplitude * phasematch(qi, grid.q(j), pm));
            s[i * modes + j] = entry;
            s[j * modes + i] = entry;
        }
    }
    GreenPair::from_s(modes, s)
}
