//! Mean field of the pump-driven source as a direct function of the pump
//! power spectrum and phasematching parameters, with its derivatives.

use super::{sinc, sinc_deriv, PhasematchParams, PixelGrid};
use crate::error::{Error, Result};

fn check(nu_power: &[f64], grid: &PixelGrid) -> Result<()> {
    let side = grid.sum_side();
    if nu_power.len() != side * side {
        return Err(Error::Dimension(format!("pump power needs {} entries, got {}", side * side, nu_power.len())));
    }
    Ok(())
}

/// Visits each unordered pixel pair `i <= j` with its sum-lattice index, the
/// sinc argument and `∂x/∂(mu00, alpha, delta)`.
fn for_pairs(grid: &PixelGrid, pm: &PhasematchParams, mut f: impl FnMut(usize, usize, usize, f64, [f64; 3])) {
    let modes = grid.n_pixels();
    for i in 0..modes {
        let qi = grid.q(i);
        for j in i..modes {
            let qj = grid.q(j);
            let dx = qi[0] - qj[0];
            let dy = qi[1] - qj[1];
            let d2 = dx * dx + dy * dy;
            let sx = qi[0] + qj[0];
            let x = pm.mu00 - pm.alpha_lz * sx + pm.delta_lz * d2;
            f(i, j, grid.sum_index(i, j), x, [1.0, -sx, d2]);
        }
    }
}

/// `⟨n_i⟩ = amplitude² Σ_j |ν(q_i+q_j)|² ξ(q_i,q_j)²`, identical to
/// `mean_field(build_greens(..))` but without forming `S`.
pub fn spdc_mean_field(nu_power: &[f64], pm: &PhasematchParams, grid: &PixelGrid) -> Result<Vec<f64>> {
    check(nu_power, grid)?;
    let a2 = pm.amplitude * pm.amplitude;
    let mut mean = vec![0.0; grid.n_pixels()];
    for_pairs(grid, pm, |i, j, k, x, _| {
        let p = nu_power[k];
        if p == 0.0 {
            return;
        }
        let s = sinc(x);
        let v = a2 * p * s * s;
        mean[i] += v;
        if j != i {
            mean[j] += v;
        }
    });
    Ok(mean)
}

/// Vector-Jacobian product of [`spdc_mean_field`]: returns the gradient with
/// respect to the pump power lattice and to `(mu00, alpha_lz, delta_lz,
/// amplitude)`.
pub fn spdc_mean_field_vjp(
    nu_power: &[f64],
    pm: &PhasematchParams,
    grid: &PixelGrid,
    upstream: &[f64],
) -> Result<(Vec<f64>, [f64; 4])> {
    check(nu_power, grid)?;
    if upstream.len() != grid.n_pixels() {
        return Err(Error::Dimension("upstream gradient must cover every pixel".into()));
    }
    let a = pm.amplitude;
    let a2 = a * a;
    let mut g_power = vec![0.0; nu_power.len()];
    let mut g_pm = [0.0; 4];
    for_pairs(grid, pm, |i, j, k, x, dx| {
        let gsum = if i == j { upstream[i] } else { upstream[i] + upstream[j] };
        let s = sinc(x);
        g_power[k] += gsum * a2 * s * s;
        let p = nu_power[k];
        if p == 0.0 {
            return;
        }
        let dsx = gsum * a2 * p * 2.0 * s * sinc_deriv(x);
        for (g, d) in g_pm.iter_mut().zip(dx) {
            *g += dsx * d;
        }
        g_pm[3] += gsum * 2.0 * a * p * s * s;
    });
    Ok((g_power, g_pm))
}

/// Mean field together with its Jacobian with respect to the four
/// phasematching parameters, row-major `n² × 4`.
pub fn spdc_mean_field_jacobian(
    nu_power: &[f64],
    pm: &PhasematchParams,
    grid: &PixelGrid,
) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    check(nu_power, grid)?;
    let a = pm.amplitude;
    let a2 = a * a;
    let modes = grid.n_pixels();
    let mut mean = vec![0.0; modes];
    let mut jac = vec![[0.0; 4]; modes];
    for_pairs(grid, pm, |i, j, k, x, dx| {
        let p = nu_power[k];
        if p == 0.0 {
            return;
        }
        let s = sinc(x);
        let v = a2 * p * s * s;
        let ds = a2 * p * 2.0 * s * sinc_deriv(x);
        let row = [ds * dx[0], ds * dx[1], ds * dx[2], 2.0 * a * p * s * s];
        let targets = [i, j];
        for &t in &targets[..if i == j { 1 } else { 2 }] {
            mean[t] += v;
            for (jt, r) in jac[t].iter_mut().zip(row) {
                *jt += r;
            }
        }
    });
    Ok((mean, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{build_greens, mean_field, PumpSpectrum};
    use num_complex::Complex64;

    fn setup() -> (PixelGrid, PumpSpectrum, PhasematchParams) {
        let grid = PixelGrid::new(4, 0.7).unwrap();
        let side = grid.sum_side();
        let values = (0..side * side)
            .map(|k| Complex64::new(((k * 13) % 7) as f64 / 7.0, ((k * 5) % 3) as f64 / 3.0 - 0.3))
            .collect();
        let nu = PumpSpectrum::new(side, values).unwrap();
        (grid, nu, PhasematchParams::new(0.4, 0.2, -0.15, 1.3).unwrap())
    }

    #[test]
    fn agrees_with_greens_route() {
        let (grid, nu, pm) = setup();
        let power: Vec<f64> = nu.values.iter().map(|v| v.norm_sqr()).collect();
        let direct = spdc_mean_field(&power, &pm, &grid).unwrap();
        let via_s = mean_field(&build_greens(&nu, &pm, &grid).unwrap()).unwrap();
        for (a, b) in direct.iter().zip(&via_s.values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let (m2, _) = spdc_mean_field_jacobian(&power, &pm, &grid).unwrap();
        assert_eq!(direct, m2);
    }

    #[test]
    fn vjp_matches_jacobian() {
        let (grid, nu, pm) = setup();
        let power: Vec<f64> = nu.values.iter().map(|v| v.norm_sqr()).collect();
        let up: Vec<f64> = (0..16).map(|k| (k as f64 * 0.37).cos()).collect();
        let (_, jac) = spdc_mean_field_jacobian(&power, &pm, &grid).unwrap();
        let (_, g_pm) = spdc_mean_field_vjp(&power, &pm, &grid, &up).unwrap();
        for c in 0..4 {
            let expect: f64 = jac.iter().zip(&up).map(|(r, u)| r[c] * u).sum();
            assert!((g_pm[c] - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
    }
}
