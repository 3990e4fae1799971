//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

pub mod probes;

use corrvis::grad::{Graph, NodeId};
use corrvis::optics::{build_greens, pump_spectrum_from_slm, GreenPair, PhasematchParams, PixelGrid, SlmPhase};
use corrvis::tensor::Tensor;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

fn dense(modes: usize, v: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(modes, modes, v)
}

/// Photon-number covariance from dense matrix algebra over the full
/// `(C, S)` pair.
pub fn dense_covariance(g: &GreenPair) -> Vec<f64> {
    let m = g.n_modes;
    let s = dense(m, &g.s);
    let c = dense(m, &g.c);
    let a = s.map(|z| z.conj()) * s.transpose();
    let b = &c * c.adjoint();
    let x = s.map(|z| z.conj()) * c.adjoint();
    let y = &c * s.transpose();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            out[i * m + k] = (a[(i, k)] * b[(i, k)] + x[(i, k)] * y[(i, k)]).re;
        }
    }
    out
}

/// Photon-number covariance of two-mode squeezing at first order, from the
/// Wick expansion: `|S_ki|² + δ_ik Σ_j |S_ij|²`.
pub fn wick_covariance(g: &GreenPair) -> Vec<f64> {
    let m = g.n_modes;
    let s = dense(m, &g.s);
    let n = &s * s.adjoint();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let mut v = s[(k, i)].norm_sqr();
            if i == k {
                v += n[(i, i)].re;
            }
            out[i * m + k] = v;
        }
    }
    out
}

/// `P(i, j)` of an unordered pair from the pair amplitudes, by brute force
/// over the ordered index set.
pub fn jpd_oracle(g: &GreenPair) -> Vec<Vec<f64>> {
    let m = g.n_modes;
    let mut p = vec![vec![0.0; m]; m];
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let w = g.s[i * m + j].norm_sqr();
            total += w;
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            p[a][b] += w;
        }
    }
    for row in &mut p {
        row.iter_mut().for_each(|v| *v /= total);
    }
    p
}

/// Photons landing in each mode per pair event, normalized.
pub fn marginal_oracle(p: &[Vec<f64>]) -> Vec<f64> {
    let m = p.len();
    let mut out = vec![0.0; m];
    for i in 0..m {
        for j in i..m {
            out[i] += p[i][j];
            out[j] += p[i][j];
        }
    }
    let t: f64 = out.iter().sum();
    out.iter().map(|v| v / t).collect()
}

pub fn random_phase(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..m * m).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
}

/// Green's functions of an `n×n` grid pumped through a random-phase
/// Gaussian modulator.
pub fn spdc_greens(n: usize, rng: &mut impl Rng) -> GreenPair {
    let grid = PixelGrid::unit(n).unwrap();
    let m = 2 * n;
    let slm = SlmPhase::gaussian(m, m as f64 / 3.0).with_phase(random_phase(m, rng)).unwrap();
    let nu = pump_spectrum_from_slm(&slm, &grid).unwrap();
    build_greens(&nu, &PhasematchParams::new(0.8, 0.12, 0.05, 1.0).unwrap(), &grid).unwrap()
}

/// A random complex-symmetric pair matrix with `C = I`.
pub fn random_greens(modes: usize, rng: &mut impl Rng) -> GreenPair {
    let mut s = vec![Complex64::new(0.0, 0.0); modes * modes];
    for i in 0..modes {
        for j in i..modes {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            s[i * modes + j] = z;
            s[j * modes + i] = z;
        }
    }
    GreenPair::from_s(modes, s).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Analytic gradient of a scalar graph built on a single leaf.
pub fn graph_grad(build: impl Fn(&mut Graph, NodeId) -> NodeId, x: &[f64], shape: &[usize]) -> (f64, Vec<f64>) {
    let mut g = Graph::new();
    let leaf = g.leaf(Tensor::new(shape.to_vec(), x.to_vec()));
    let out = build(&mut g, leaf);
    let value = g.value(out).item();
    g.backward(out).unwrap();
    (value, g.grad_or_zeros(leaf).into_data())
}

/// Indices of the `k` largest-magnitude entries, ties broken by index.
pub fn top_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Deterministic weights for reducing a vector to a scalar loss.
pub fn probe_weights(len: usize) -> Vec<f64> {
    (0..len).map(|k| ((k as f64 + 1.0) * 0.37).sin()).collect()
}
