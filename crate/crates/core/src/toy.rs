//! Exact two-mode example with threshold detectors: outcome tables, MAP
//! decisions and the beamsplitter search for the uncorrelated source.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToySourceKind {
    /// Coherent state split by a beamsplitter at `bs_angle`.
    Coherent,
    /// Two-mode squeezed vacuum.
    Squeezed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySource {
    pub kind: ToySourceKind,
    /// Expected photons before the object, summed over both modes.
    pub mean_photons: f64,
    pub bs_angle: f64,
}

impl ToySource {
    pub fn coherent(mean_photons: f64, bs_angle: f64) -> Self {
        Self { kind: ToySourceKind::Coherent, mean_photons, bs_angle }
    }

    pub fn squeezed(mean_photons: f64) -> Self {
        Self { kind: ToySourceKind::Squeezed, mean_photons, bs_angle: 0.0 }
    }
}

/// Click-pattern probabilities `[|00⟩, |10⟩, |01⟩, |11⟩]` before the object;
/// `|10⟩` means mode 0 carries light.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPMF {
    pub p: [f64; 4],
}

impl ThresholdPMF {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("threshold pmf {p:?} is not a distribution")));
        }
        Ok(Self { p })
    }

    /// Click probability of each mode.
    pub fn marginals(&self) -> (f64, f64) {
        (self.p[1] + self.p[3], self.p[2] + self.p[3])
    }

    /// Independent modes with the same per-mode click probabilities.
    pub fn decorrelated(&self) -> Self {
        let (a, b) = self.marginals();
        Self { p: [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b] }
    }
}

/// Threshold statistics of a source. Coherent modes are independent Poisson
/// with means `μcos²θ`, `μsin²θ`; the squeezed source emits pairs whose
/// number is thermal with mean `μ/2`.
pub fn source_pmf(src: &ToySource) -> Result<ThresholdPMF> {
    if !(src.mean_photons.is_finite() && src.mean_photons >= 0.0) {
        return Err(Error::InvalidParameter(format!("mean photons must be >= 0, got {}", src.mean_photons)));
    }
    let mu = src.mean_photons;
    let p = match src.kind {
        ToySourceKind::Coherent => {
            let (s, c) = src.bs_angle.sin_cos();
            let a = -(-mu * c * c).exp_m1();
            let b = -(-mu * s * s).exp_m1();
            [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b]
        }
        ToySourceKind::Squeezed => {
            let p0 = 1.0 / (1.0 + mu / 2.0);
            [p0, 0.0, 0.0, (mu / 2.0) / (1.0 + mu / 2.0)]
        }
    };
    Ok(ThresholdPMF { p })
}

/// `cells[measurement][class]` = joint probability with uniform class prior.
/// Classes: 0 no object, 1 blocks mode 1, 2 blocks mode 0, 3 blocks both.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub cells: [[f64; 4]; 4],
}

impl OutcomeTable {
    pub fn total(&self) -> f64 {
        self.cells.iter().flatten().sum()
    }

    pub fn class_marginal(&self, class: usize) -> f64 {
        self.cells.iter().map(|row| row[class]).sum()
    }
}

/// Joint measurement/class probabilities for background click probability
/// `eps` per detector.
pub fn outcome_table(pmf: &ThresholdPMF, eps: f64) -> Result<OutcomeTable> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("background probability {eps} outside [0, 1]")));
    }
    let [p0, p1, p2, p3] = pmf.p.map(|v| v / 4.0);
    let e = eps;
    let f = 1.0 - eps;
    let ef = e * f;
    let all = p0 + p1 + p2 + p3;
    let cells = [
        // measured |00⟩
        [p0 * f * f, (p0 + p2) * f * f, (p0 + p1) * f * f, all * f * f],
        // measured |10⟩
        [p0 * ef + p1 * f, p0 * ef + p1 * f + p2 * ef + p3 * f, (p0 + p1) * ef, all * ef],
        // measured |01⟩
        [p0 * ef + p2 * f, (p0 + p2) * ef, p0 * ef + p1 * ef + p2 * f + p3 * f, all * ef],
        // measured |11⟩
        [
            p0 * e * e + p1 * e + p2 * e + p3,
            p0 * e * e + p1 * e + p2 * e * e + p3 * e,
            p0 * e * e + p1 * e * e + p2 * e + p3 * e,
            all * e * e,
        ],
    ];
    Ok(OutcomeTable { cells })
}

/// `1 − Σ_meas max_class P(meas, class)`.
pub fn map_error(table: &OutcomeTable) -> f64 {
    map_error_restricted(table, &[0, 1, 2, 3])
}

/// MAP error when the prior is uniform over `classes` only.
pub fn map_error_restricted(table: &OutcomeTable, classes: &[usize]) -> f64 {
    let w = 4.0 / classes.len() as f64;
    let correct: f64 = table
        .cells
        .iter()
        .map(|row| classes.iter().map(|&c| row[c] * w).fold(0.0, f64::max))
        .sum();
    1.0 - correct
}

/// Grid search over `θ ∈ [0, π/2]` for the coherent source; the lowest grid
/// index wins ties.
pub fn optimize_beamsplitter(eps: f64, mean_photons: f64, grid_steps: usize) -> Result<(f64, f64)> {
    if grid_steps < 2 {
        return Err(Error::InvalidParameter("beamsplitter grid needs at least 2 points".into()));
    }
    let mut best = (0.0, f64::INFINITY);
    for k in 0..grid_steps {
        let theta = FRAC_PI_2 * k as f64 / (grid_steps - 1) as f64;
        let pmf = source_pmf(&ToySource::coherent(mean_photons, theta))?;
        let err = map_error(&outcome_table(&pmf, eps)?);
        if err < best.1 {
            best = (theta, err);
        }
    }
    Ok(best)
}

/// One row of the correlated-versus-uncorrelated comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub eps: f64,
    pub error_correlated: f64,
    pub error_uncorrelated: f64,
    pub best_theta: f64,
}

pub fn error_sweep(mean_photons: f64, eps_values: &[f64], grid_steps: usize) -> Result<Vec<ToyRow>> {
    let squeezed = source_pmf(&ToySource::squeezed(mean_photons))?;
    eps_values
        .iter()
        .map(|&eps| {
            let (best_theta, error_uncorrelated) = optimize_beamsplitter(eps, mean_photons, grid_steps)?;
            Ok(ToyRow {
                eps,
                error_correlated: map_error(&outcome_table(&squeezed, eps)?),
                error_uncorrelated,
                best_theta,
            })
        })
        .collect()
}

/// `ε ∈ {0, 0.05, …, 0.5}`.
pub fn default_eps_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.05).collect()
}
