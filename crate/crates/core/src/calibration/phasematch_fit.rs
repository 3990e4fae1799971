use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{pump_spectrum_from_slm, spdc_mean_field, spdc_mean_field_jacobian, MeanField, PhasematchParams, PixelGrid, SlmPhase};

/// A modulator pattern and the mean field it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldMeasurement {
    pub slm: SlmPhase,
    pub observed: MeanField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Fit the amplitude as well; otherwise it stays at its initial value.
    pub fit_amplitude: bool,
    /// Reciprocal condition number of `JᵀJ` below which the problem is
    /// flagged as underdetermined.
    pub rcond_warn: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 2000, rel_tol: 1e-9, armijo: 1e-4, fit_amplitude: true, rcond_warn: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasematchFit {
    pub params: PhasematchParams,
    pub objective: f64,
    /// Objective after every accepted iteration, starting with the initial
    /// value.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub underdetermined: bool,
    pub warnings: Vec<String>,
}

struct Problem<'a> {
    powers: Vec<Vec<f64>>,
    observed: Vec<&'a [f64]>,
    grid: &'a PixelGrid,
    mask: [bool; 4],
}

impl Problem<'_> {
    fn objective(&self, pm: &PhasematchParams) -> Result<f64> {
        let mut f = 0.0;
        for (p, obs) in self.powers.iter().zip(&self.observed) {
            let m = spdc_mean_field(p, pm, self.grid)?;
            f += m.iter().zip(obs.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(f)
    }

    /// Objective, gradient and Gauss-Newton matrix `JᵀJ`.
    fn linearize(&self, pm: &PhasematchParams) -> Result<(f64, Vector4<f64>, Matrix4<f64>)> {
        let mut f = 0.0;
        let mut grad = Vector4::zeros();
        let mut jtj = Matrix4::zeros();
        for (p, obs) in self.powers.iter().zip(&self.observed) {
            let (m, jac) = spdc_mean_field_jacobian(p, pm, self.grid)?;
            for ((mi, oi), row) in m.iter().zip(obs.iter()).zip(&jac) {
                let r = mi - oi;
                f += r * r;
                let mut j = Vector4::from(*row);
                for k in 0..4 {
                    if !self.mask[k] {
                        j[k] = 0.0;
                    }
                }
                grad += 2.0 * r * j;
                jtj += j * j.transpose();
            }
        }
        Ok((f, grad, jtj))
    }
}

fn distinct_patterns(ms: &[MeanFieldMeasurement]) -> usize {
    let mut seen: Vec<&SlmPhase> = Vec::new();
    for m in ms {
        if !seen.iter().any(|s| **s == m.slm) {
            seen.push(&m.slm);
        }
    }
    seen.len()
}

/// Least-squares fit of the phasematching parameters to measured mean
/// fields. Each iteration takes a damped Gauss-Newton-preconditioned
/// gradient step and backtracks until the Armijo condition holds, so the
/// objective never increases. Returns the best point visited.
pub fn fit_phasematching(
    measurements: &[MeanFieldMeasurement],
    grid: &PixelGrid,
    init: &PhasematchParams,
    opts: &FitOptions,
) -> Result<PhasematchFit> {
    grid.validate()?;
    init.validate()?;
    if measurements.is_empty() {
        return Err(Error::Empty("no mean-field measurements".into()));
    }
    let mut powers = Vec::with_capacity(measurements.len());
    for m in measurements {
        if m.observed.n != grid.n {
            return Err(Error::Dimension(format!("measured field side {} vs grid side {}", m.observed.n, grid.n)));
        }
        let nu = pump_spectrum_from_slm(&m.slm, grid)?;
        powers.push(nu.values.iter().map(|v| v.norm_sqr()).collect());
    }
    let problem = Problem {
        powers,
        observed: measurements.iter().map(|m| m.observed.values.as_slice()).collect(),
        grid,
        mask: [true, true, true, opts.fit_amplitude],
    };

    let mut warnings = Vec::new();
    let mut underdetermined = false;
    if distinct_patterns(measurements) < 2 {
        underdetermined = true;
        warnings.push("fewer than two distinct SLM patterns".to_string());
    }

    let mut theta = Vector4::from(init.to_array());
    let (mut f, mut grad, mut jtj) = problem.linearize(init)?;
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![f];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        if grad.norm() == 0.0 || f == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut precond = jtj;
        for k in 0..4 {
            let d = jtj[(k, k)];
            precond[(k, k)] = if problem.mask[k] { d * (1.0 + lambda) + 1e-300 } else { 1.0 };
        }
        let dir = match precond.cholesky() {
            Some(ch) => -ch.solve(&(0.5 * grad)),
            None => -grad,
        };
        let slope = grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -grad };
        let slope = grad.dot(&dir);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = theta + t * dir;
            let pm = PhasematchParams::from_array(cand.into());
            let fc = problem.objective(&pm)?;
            if !fc.is_finite() {
                return Err(Error::NonFiniteObjective { iteration: iterations });
            }
            if fc <= f + opts.armijo * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        lambda = if t == 1.0 { (lambda / 3.0).max(1e-12) } else { (lambda * 2.0).min(1e6) };
        let rel = (f - fc) / f;
        theta = cand;
        let pm = PhasematchParams::from_array(theta.into());
        (f, grad, jtj) = problem.linearize(&pm)?;
        trace.push(f);
        if rel < opts.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("no convergence after {} iterations", opts.max_iters));
    }

    let active: Vec<usize> = (0..4).filter(|&k| problem.mask[k]).collect();
    let sub = nalgebra::DMatrix::from_fn(active.len(), active.len(), |r, c| jtj[(active[r], active[c])]);
    let eig = SymmetricEigen::new(sub).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(hi > 0.0) || lo <= opts.rcond_warn * hi {
        underdetermined = true;
        warnings.push(format!("Gauss-Newton matrix is ill-conditioned (eigenvalues {lo:.3e}..{hi:.3e})"));
    }

    let mut params = PhasematchParams::from_array(theta.into());
    params.amplitude = params.amplitude.abs();
    Ok(PhasematchFit { params, objective: f, trace, iterations, converged, underdetermined, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(grid: &PixelGrid, truth: &PhasematchParams, slms: &[SlmPhase]) -> Vec<MeanFieldMeasurement> {
        slms.iter()
            .map(|slm| {
                let nu = pump_spectrum_from_slm(slm, grid).unwrap();
                let p: Vec<f64> = nu.values.iter().map(|v| v.norm_sqr()).collect();
                let m = spdc_mean_field(&p, truth, grid).unwrap();
                MeanFieldMeasurement { slm: slm.clone(), observed: MeanField::new(grid.n, m).unwrap() }
            })
            .collect()
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let grid = PixelGrid::unit(6).unwrap();
        let truth = PhasematchParams::new(0.8, 0.12, 0.05, 1.0).unwrap();
        let m = grid.sum_side();
        let ramp: Vec<f64> = (0..m * m).map(|k| 2.0 * std::f64::consts::PI * (k % m) as f64 / m as f64).collect();
        let slms = [SlmPhase::disk(m, 3.0), SlmPhase::disk(m, 3.0).with_phase(ramp).unwrap()];
        let fit = fit_phasematching(&synth(&grid, &truth, &slms), &grid, &truth, &FitOptions::default()).unwrap();
        assert!(fit.objective < 1e-12);
        for (a, b) in fit.params.to_array().iter().zip(truth.to_array()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_flat_pump_is_underdetermined() {
        let grid = PixelGrid::unit(4).unwrap();
        let truth = PhasematchParams::new(0.8, 0.12, 0.05, 1.0).unwrap();
        let slms = [SlmPhase::flat(grid.sum_side())];
        let init = PhasematchParams::new(0.7, 0.1, 0.04, 1.0).unwrap();
        let opts = FitOptions { max_iters: 50, ..FitOptions::default() };
        let fit = fit_phasematching(&synth(&grid, &truth, &slms), &grid, &init, &opts).unwrap();
        assert!(fit.underdetermined);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
