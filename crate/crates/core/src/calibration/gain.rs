use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel-value histogram as `(value, count)` rows sorted by value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<(f64, u64)>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut map: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
        for &s in samples {
            // keyed on an order-preserving bit pattern so equal values merge
            let key = if s >= 0.0 { s.to_bits() ^ (1 << 63) } else { !s.to_bits() };
            map.entry(key).or_insert((s, 0)).1 += 1;
        }
        Self { bins: map.into_values().collect() }
    }

    /// Parses two whitespace- or comma-separated columns. `#` starts a
    /// comment and a non-numeric first line is taken as a header.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bins = Vec::new();
        let mut first = true;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let parsed: Vec<f64> = cols.iter().filter_map(|c| c.parse().ok()).collect();
            let is_header = first && parsed.len() != cols.len();
            first = false;
            if is_header {
                continue;
            }
            match parsed[..] {
                [v, c] if cols.len() == 2 && v.is_finite() && c >= 0.0 && c.fract() == 0.0 => bins.push((v, c as u64)),
                _ => return Err(Error::Format(format!("histogram line {}: expected `value count`", lineno + 1))),
            }
        }
        bins.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { bins })
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { bins: self.bins.iter().map(|&(v, n)| (v * c, n)).collect() }
    }

    fn quantile(&self, q: f64) -> f64 {
        let target = q * self.total() as f64;
        let mut acc = 0.0;
        for &(v, n) in &self.bins {
            acc += n as f64;
            if acc >= target {
                return v;
            }
        }
        self.bins.last().map(|b| b.0).unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFitOptions {
    pub min_tail_samples: u64,
    pub max_iters: usize,
}

impl Default for GainFitOptions {
    fn default() -> Self {
        Self { min_tail_samples: 100, max_iters: 200 }
    }
}

/// Read-noise peak `a·exp(−(x−μ)²/σ²)` and exponential EM tail of scale `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainFit {
    pub g: f64,
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub tail_start: f64,
    pub tail_samples: u64,
}

fn gauss(p: &Vector3<f64>, x: f64) -> (f64, Vector3<f64>) {
    let (a, mu, s) = (p[0], p[1], p[2]);
    let u = (x - mu) / s;
    let e = (-u * u).exp();
    let v = a * e;
    (v, Vector3::new(e, v * 2.0 * u / s, v * 2.0 * u * u / s))
}

fn fit_peak(points: &[(f64, f64)], init: Vector3<f64>, max_iters: usize) -> Result<Vector3<f64>> {
    let cost = |p: &Vector3<f64>| points.iter().map(|&(x, y)| (gauss(p, x).0 - y).powi(2)).sum::<f64>();
    let mut p = init;
    let mut f = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(x, y) in points {
            let (v, j) = gauss(&p, x);
            jtj += j * j.transpose();
            jtr += j * (v - y);
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = p + step;
            let fc = cost(&cand);
            if fc.is_finite() && fc < f && cand[2] > 0.0 {
                let rel = (f - fc) / f.max(f64::MIN_POSITIVE);
                p = cand;
                f = fc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(p)
}

/// Least-squares Gaussian fit to the read-noise peak, then the exponential
/// scale of the counts above `μ + 2σ`: the mean excess over the threshold
/// after removing the fitted peak's own share of those counts.
pub fn fit_gain(hist: &Histogram, opts: &GainFitOptions) -> Result<GainFit> {
    if hist.total() == 0 {
        return Err(Error::Empty("histogram has no samples".into()));
    }
    let median = hist.quantile(0.5);
    let spread = (hist.quantile(0.75) - hist.quantile(0.25)) / 1.349;
    let spread = if spread > 0.0 { spread } else { 1.0 };
    let window: Vec<(f64, f64)> = hist
        .bins
        .iter()
        .filter(|(v, _)| (v - median).abs() <= 3.0 * spread)
        .map(|&(v, n)| (v, n as f64))
        .collect();
    if window.len() < 3 {
        return Err(Error::Degenerate("read-noise peak spans fewer than 3 bins".into()));
    }
    let peak = window.iter().map(|w| w.1).fold(0.0, f64::max);
    let init = Vector3::new(peak, median, std::f64::consts::SQRT_2 * spread);
    let p = fit_peak(&window, init, opts.max_iters)?;
    let (a, mu, sigma) = (p[0], p[1], p[2].abs());
    if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
        return Err(Error::Degenerate("Gaussian peak fit did not converge".into()));
    }
    let lowest = hist.bins[0].0;
    // no read-noise peak inside the data: the whole histogram is tail
    let has_peak = mu >= lowest;
    let tail_start = if has_peak { mu + 2.0 * sigma } else { lowest };
    let (mut count, mut excess) = (0u64, 0.0);
    for &(v, n) in &hist.bins {
        if v > tail_start || (!has_peak && v >= tail_start) {
            count += n;
            excess += n as f64 * (v - tail_start);
        }
    }
    if count < opts.min_tail_samples {
        return Err(Error::InsufficientTail { found: count, required: opts.min_tail_samples });
    }
    // read-noise counts that spill past the threshold, on the histogram's own lattice
    let step = window.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    let (mut spill, mut spill_excess) = (0.0, 0.0);
    if let Some(&(first, _)) = hist.bins.iter().find(|b| has_peak && b.0 > tail_start) {
        let mut v = first;
        loop {
            let c = a * (-((v - mu) / sigma).powi(2)).exp();
            if c < 1e-12 * a.abs().max(1.0) {
                break;
            }
            spill += c;
            spill_excess += c * (v - tail_start);
            v += step;
        }
    }
    let signal = count as f64 - spill;
    let g = if signal > 0.5 * count as f64 { (excess - spill_excess) / signal } else { excess / count as f64 };
    Ok(GainFit { g, mu, sigma, a, tail_start, tail_samples: count })
}
