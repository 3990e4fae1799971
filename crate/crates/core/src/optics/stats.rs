use num_complex::Complex64;

use super::GreenPair;
use crate::error::{Error, Result};

/// Expected photons per shot per pixel, `n×n` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanField {
    pub n: usize,
    pub values: Vec<f64>,
}

impl MeanField {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Dimension(format!("mean field must hold {} values", n * n)));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("mean field entries must be finite and >= 0".into()));
        }
        Ok(Self { n, values })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Copy rescaled to sum to one.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let t = self.total();
        if t <= 0.0 {
            return Err(Error::Degenerate("mean field is identically zero".into()));
        }
        Ok(self.values.iter().map(|v| v / t).collect())
    }
}

/// `⟨n_i n_k⟩ − ⟨n_i⟩⟨n_k⟩` over the `n²` pixel modes.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub n_modes: usize,
    pub values: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_modes + k]
    }
}

fn side_of(modes: usize) -> Result<usize> {
    let n = (modes as f64).sqrt().round() as usize;
    if n * n != modes {
        return Err(Error::Dimension(format!("{modes} modes do not form a square frame")));
    }
    Ok(n)
}

/// `⟨n_i⟩ = Σ_j |S_ij|²`.
pub fn mean_field(g: &GreenPair) -> Result<MeanField> {
    let n = side_of(g.n_modes)?;
    let values = g
        .s
        .chunks(g.n_modes)
        .map(|row| row.iter().map(|v| v.norm_sqr()).sum())
        .collect();
    MeanField::new(n, values)
}

fn conj_mul_transpose(a: &[Complex64], b: &[Complex64], n: usize, conj_a: bool, conj_b: bool) -> Vec<Complex64> {
    // (a or a*) · (b or b*)ᵀ
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let ar = &a[i * n..(i + 1) * n];
        for k in 0..n {
            let br = &b[k * n..(k + 1) * n];
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, y) in ar.iter().zip(br) {
                let x = if conj_a { x.conj() } else { *x };
                let y = if conj_b { y.conj() } else { *y };
                acc += x * y;
            }
            out[i * n + k] = acc;
        }
    }
    out
}

/// Photon-number covariance
/// `(S* Sᵀ) ⊙ (C C†) + (S* C†) ⊙ (C Sᵀ)`, real part.
pub fn covariance(g: &GreenPair) -> Result<CovarianceMatrix> {
    let n = g.n_modes;
    side_of(n)?;
    let values = if g.is_identity_c() {
        // (S*Sᵀ)⊙I keeps the diagonal; S*⊙Sᵀ fills the rest.
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let cross = g.s[i * n + k].conj() * g.s[k * n + i];
                v[i * n + k] = cross.re;
            }
            let diag: f64 = g.s[i * n..(i + 1) * n].iter().map(|x| x.norm_sqr()).sum();
            v[i * n + i] += diag;
        }
        v
    } else {
        let ss = conj_mul_transpose(&g.s, &g.s, n, true, false); // S* Sᵀ
        let cc = conj_mul_transpose(&g.c, &g.c, n, false, true); // C C†
        // S* C† = S* · (C*)ᵀ ; C Sᵀ
        let sc = conj_mul_transpose(&g.s, &g.c, n, true, true);
        let cs = conj_mul_transpose(&g.c, &g.s, n, false, false);
        (0..n * n).map(|k| (ss[k] * cc[k] + sc[k] * cs[k]).re).collect()
    };
    Ok(CovarianceMatrix { n_modes: n, values })
}

/// Number of unordered pairs `{i, j}`, `i ≤ j`, over `modes` pixels.
pub fn pair_count(modes: usize) -> usize {
    modes * (modes + 1) / 2
}

/// Position of the unordered pair `{i, j}` in upper-triangular row-major order.
pub fn pair_index(i: usize, j: usize, modes: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * modes - a * (a + 1) / 2 + b
}

/// Inverse of [`pair_index`], returning `(i, j)` with `i ≤ j`.
pub fn pair_from_index(index: usize, modes: usize) -> (usize, usize) {
    // row a starts at a*modes - a(a-1)/2 - a ; solve the quadratic then fix up
    let nf = modes as f64;
    let disc = (2.0 * nf + 1.0).powi(2) - 8.0 * index as f64;
    let mut a = (((2.0 * nf + 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
    a = a.min(modes.saturating_sub(1));
    let start = |a: usize| a * modes - a * (a + 1) / 2 + a;
    while a > 0 && start(a) > index {
        a -= 1;
    }
    while a + 1 < modes && start(a + 1) <= index {
        a += 1;
    }
    let b = index - (a * modes - a * (a + 1) / 2);
    (a, b)
}

/// Normalized probabilities of unordered photon-pair events.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPairDistribution {
    pub n_modes: usize,
    pub probs: Vec<f64>,
}

impl JointPairDistribution {
    pub fn new(n_modes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != pair_count(n_modes) {
            return Err(Error::Dimension(format!(
                "pair distribution over {n_modes} modes needs {} entries",
                pair_count(n_modes)
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("pair probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("pair distribution has no mass".into()));
        }
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("pair probabilities sum to {total}, not 1")));
        }
        Ok(Self { n_modes, probs })
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.probs[pair_index(i, j, self.n_modes)]
    }

    /// Expected photons per pixel per pair event, normalized to sum to one.
    pub fn photon_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_modes];
        for (k, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (i, j) = pair_from_index(k, self.n_modes);
            m[i] += p;
            m[j] += p;
        }
        let t: f64 = m.iter().sum();
        m.iter_mut().for_each(|v| *v /= t);
        m
    }

    /// Probability that both photons of a single pair survive the given
    /// per-pixel transmittances.
    pub fn pair_survival(&self, transmittance: &[f64]) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| {
                let (i, j) = pair_from_index(k, self.n_modes);
                p * transmittance[i] * transmittance[j]
            })
            .sum()
    }
}

/// `P({i,j}) = (|S_ij|² + |S_ji|²)/Tr[S†S]` for `i < j`,
/// `P({i,i}) = |S_ii|²/Tr[S†S]`.
pub fn biphoton_jpd(g: &GreenPair) -> Result<JointPairDistribution> {
    let n = g.n_modes;
    let trace: f64 = g.s.iter().map(|v| v.norm_sqr()).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Degenerate("S is identically zero".into()));
    }
    let mut probs = Vec::with_capacity(pair_count(n));
    for i in 0..n {
        probs.push(g.s[i * n + i].norm_sqr() / trace);
        for j in i + 1..n {
            probs.push((g.s[i * n + j].norm_sqr() + g.s[j * n + i].norm_sqr()) / trace);
        }
    }
    Ok(JointPairDistribution { n_modes: n, probs })
}
