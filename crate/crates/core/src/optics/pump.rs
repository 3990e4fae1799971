use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::PixelGrid;
use crate::error::{Error, Result};

/// Phase pattern and pump amplitude profile on the modulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlmPhase {
    pub m: usize,
    /// Row-major `m×m`, radians.
    pub phase: Vec<f64>,
    /// Row-major `m×m`, values in `[0, 1]`.
    pub aperture: Vec<f64>,
}

impl SlmPhase {
    pub fn new(m: usize, phase: Vec<f64>, aperture: Vec<f64>) -> Result<Self> {
        let slm = Self { m, phase, aperture };
        slm.validate()?;
        Ok(slm)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.m * self.m;
        if self.phase.len() != len || self.aperture.len() != len {
            return Err(Error::Dimension(format!("SLM buffers must hold {len} entries")));
        }
        if self.phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("SLM phase must be finite".into()));
        }
        if self.aperture.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidParameter("SLM aperture must lie in [0, 1]".into()));
        }
        if self.aperture.iter().all(|&a| a == 0.0) {
            return Err(Error::InvalidParameter("SLM aperture is fully dark".into()));
        }
        Ok(())
    }

    /// Flat phase with a uniform aperture covering the whole modulator.
    pub fn flat(m: usize) -> Self {
        Self { m, phase: vec![0.0; m * m], aperture: vec![1.0; m * m] }
    }

    /// Flat phase behind a uniform disk of the given radius (in SLM pixels).
    pub fn disk(m: usize, radius: f64) -> Self {
        let c = (m as f64 - 1.0) / 2.0;
        let aperture = (0..m * m)
            .map(|k| {
                let (r, col) = ((k / m) as f64 - c, (k % m) as f64 - c);
                if r * r + col * col <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Self { m, phase: vec![0.0; m * m], aperture }
    }

    /// Flat phase behind a Gaussian amplitude profile of 1/e² radius `waist`.
    pub fn gaussian(m: usize, waist: f64) -> Self {
        let c = (m as f64 - 1.0) / 2.0;
        let aperture = (0..m * m)
            .map(|k| {
                let (r, col) = ((k / m) as f64 - c, (k % m) as f64 - c);
                (-(r * r + col * col) / (waist * waist)).exp()
            })
            .collect();
        Self { m, phase: vec![0.0; m * m], aperture }
    }

    pub fn with_phase(mut self, phase: Vec<f64>) -> Result<Self> {
        self.phase = phase;
        self.validate()?;
        Ok(self)
    }
}

/// Pump angular spectrum on the `(2n-1)²` sum-coordinate lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpSpectrum {
    pub side: usize,
    pub values: Vec<Complex64>,
}

impl PumpSpectrum {
    pub fn new(side: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != side * side {
            return Err(Error::Dimension(format!("spectrum needs {} values", side * side)));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("pump spectrum must be finite".into()));
        }
        if values.iter().all(|v| v.norm_sqr() == 0.0) {
            return Err(Error::InvalidParameter("pump spectrum is identically zero".into()));
        }
        Ok(Self { side, values })
    }

    /// Plane-wave pump: a single nonzero component at the sum origin.
    pub fn plane_wave(grid: &PixelGrid) -> Self {
        let side = grid.sum_side();
        let mut values = vec![Complex64::new(0.0, 0.0); side * side];
        values[grid.sum_origin()] = Complex64::new(1.0, 0.0);
        Self { side, values }
    }

    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Complex field `aperture · exp(i·phase)` on the modulator.
pub fn slm_field(slm: &SlmPhase) -> Vec<Complex64> {
    slm.phase
        .iter()
        .zip(&slm.aperture)
        .map(|(&p, &a)| Complex64::from_polar(a, p))
        .collect()
}

fn fft2(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..m {
        for r in 0..m {
            col[r] = data[r * m + c];
        }
        fft.process(&mut col);
        for r in 0..m {
            data[r * m + c] = col[r];
        }
    }
}

/// Frequency bin (on the `m`-point transform) feeding each lattice row/column.
fn lattice_bins(grid: &PixelGrid, m: usize) -> Vec<usize> {
    let c2 = 2 * grid.center() as isize;
    (0..grid.sum_side() as isize)
        .map(|s| (s - c2).rem_euclid(m as isize) as usize)
        .collect()
}

fn check_slm(slm: &SlmPhase, grid: &PixelGrid) -> Result<()> {
    slm.validate()?;
    if slm.m < grid.sum_side() {
        return Err(Error::Dimension(format!(
            "SLM side {} is smaller than the {}-point pump lattice",
            slm.m,
            grid.sum_side()
        )));
    }
    Ok(())
}

fn cropped_transform(slm: &SlmPhase, bins: &[usize]) -> Vec<Complex64> {
    let m = slm.m;
    let mut field = slm_field(slm);
    fft2(&mut field, m, false);
    let scale = 1.0 / m as f64;
    let mut values = Vec::with_capacity(bins.len() * bins.len());
    for &br in bins {
        for &bc in bins {
            values.push(field[br * m + bc] * scale);
        }
    }
    values
}

fn cropped_adjoint(slm: &SlmPhase, bins: &[usize], grad: &[Complex64]) -> Vec<f64> {
    let m = slm.m;
    let side = bins.len();
    let mut g = vec![Complex64::new(0.0, 0.0); m * m];
    for (r, &br) in bins.iter().enumerate() {
        for (c, &bc) in bins.iter().enumerate() {
            g[br * m + bc] += grad[r * side + c];
        }
    }
    // adjoint of the unitary forward transform
    fft2(&mut g, m, true);
    let scale = 1.0 / m as f64;
    slm_field(slm)
        .iter()
        .zip(&g)
        .map(|(z, gz)| {
            let gz = gz * scale;
            // d/dphase of (a cos p, a sin p)
            -gz.re * z.im + gz.im * z.re
        })
        .collect()
}

/// Unitary 2-D DFT of the modulated pump, cropped around zero frequency onto
/// the sum-coordinate lattice.
pub fn pump_spectrum_from_slm(slm: &SlmPhase, grid: &PixelGrid) -> Result<PumpSpectrum> {
    check_slm(slm, grid)?;
    PumpSpectrum::new(grid.sum_side(), cropped_transform(slm, &lattice_bins(grid, slm.m)))
}

/// Pulls a gradient on the spectrum (`∂L/∂Re + i ∂L/∂Im` per lattice entry)
/// back to the SLM phase.
pub fn pump_spectrum_adjoint(slm: &SlmPhase, grid: &PixelGrid, grad: &[Complex64]) -> Result<Vec<f64>> {
    check_slm(slm, grid)?;
    let side = grid.sum_side();
    if grad.len() != side * side {
        return Err(Error::Dimension("spectrum gradient has wrong length".into()));
    }
    Ok(cropped_adjoint(slm, &lattice_bins(grid, slm.m), grad))
}

fn frame_bins(grid: &PixelGrid, m: usize) -> Vec<usize> {
    let c = grid.center() as isize;
    (0..grid.n as isize).map(|s| (s - c).rem_euclid(m as isize) as usize).collect()
}

/// Far field of the modulated beam on the `n×n` camera grid, for the
/// uncorrelated illumination path.
pub fn far_field_from_slm(slm: &SlmPhase, grid: &PixelGrid) -> Result<Vec<Complex64>> {
    slm.validate()?;
    if slm.m < grid.n {
        return Err(Error::Dimension(format!("SLM side {} is smaller than the {}-pixel frame", slm.m, grid.n)));
    }
    Ok(cropped_transform(slm, &frame_bins(grid, slm.m)))
}

pub fn far_field_adjoint(slm: &SlmPhase, grid: &PixelGrid, grad: &[Complex64]) -> Result<Vec<f64>> {
    if grad.len() != grid.n_pixels() {
        return Err(Error::Dimension("far-field gradient has wrong length".into()));
    }
    far_field_from_slm(slm, grid)?;
    Ok(cropped_adjoint(slm, &frame_bins(grid, slm.m), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn flat_disk_peaks_at_origin() {
        let grid = PixelGrid::unit(6).unwrap();
        let slm = SlmPhase::disk(15, 5.0);
        let spec = pump_spectrum_from_slm(&slm, &grid).unwrap();
        let (argmax, _) = spec
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        assert_eq!(argmax, grid.sum_origin());
    }

    #[test]
    fn full_aperture_gives_plane_wave() {
        let grid = PixelGrid::unit(4).unwrap();
        let spec = pump_spectrum_from_slm(&SlmPhase::flat(7), &grid).unwrap();
        let expected = PumpSpectrum::plane_wave(&grid);
        for (a, b) in spec.values.iter().zip(&expected.values) {
            assert!((a.re - 7.0 * b.re).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn linear_ramp_shifts_spectrum() {
        let grid = PixelGrid::unit(5).unwrap();
        let m = grid.sum_side();
        let base = SlmPhase::disk(m, 3.5);
        let k = 2usize;
        let ramp: Vec<f64> = (0..m * m).map(|i| 2.0 * PI * (k * (i % m)) as f64 / m as f64).collect();
        let flat = pump_spectrum_from_slm(&base, &grid).unwrap();
        let shifted = pump_spectrum_from_slm(&base.clone().with_phase(ramp).unwrap(), &grid).unwrap();
        for r in 0..m {
            for c in 0..m {
                let src = flat.values[r * m + c];
                let dst = shifted.values[r * m + (c + k) % m];
                assert!((src - dst).norm() < 1e-12, "mismatch at ({r},{c})");
            }
        }
    }

    #[test]
    fn random_phase_preserves_power() {
        let grid = PixelGrid::unit(6).unwrap();
        let m = grid.sum_side();
        let base = SlmPhase::gaussian(m, 4.0);
        let mut rng = crate::rng::seeded(3);
        let phase: Vec<f64> = (0..m * m).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let flat = pump_spectrum_from_slm(&base, &grid).unwrap();
        let speckle = pump_spectrum_from_slm(&base.clone().with_phase(phase).unwrap(), &grid).unwrap();
        let input: f64 = base.aperture.iter().map(|a| a * a).sum();
        assert!((flat.power() - input).abs() / input < 1e-9);
        assert!((speckle.power() - input).abs() / input < 1e-9);
    }

    #[test]
    fn undersized_slm_is_rejected() {
        let grid = PixelGrid::unit(6).unwrap();
        assert!(matches!(
            pump_spectrum_from_slm(&SlmPhase::flat(10), &grid),
            Err(Error::Dimension(_))
        ));
    }
}
