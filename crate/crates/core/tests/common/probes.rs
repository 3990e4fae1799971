//! Finite-difference probes of the differentiable chains.

use corrvis::grad::{ste_attach, Graph};
use corrvis::model::{batch_loss, forward_graph, TransformerConfig, TransformerParams};
use corrvis::optics::{PhasematchParams, PixelGrid, SlmPhase};
use corrvis::pipeline::{Source, SourceKind};
use corrvis::rng;
use corrvis::sensing::{Frame, FrameSet};
use corrvis::tensor::Tensor;

use super::{central_diff, probe_weights, random_phase, rel_err, top_indices};

pub const H: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Probe {
    pub chain: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

fn source(kind: SourceKind, seed: u64) -> Source {
    let grid = PixelGrid::unit(4).unwrap();
    let mut r = rng::seeded(seed);
    let slm = SlmPhase::gaussian(8, 3.0).with_phase(random_phase(8, &mut r)).unwrap();
    let mut src = Source::new(kind, grid, PhasematchParams::new(0.8, 0.12, 0.05, 1.0).unwrap(), slm).unwrap();
    if kind == SourceKind::SpdcIdeal {
        // move away from the pump-shaped start
        let p: Vec<f64> = src.physical().iter().enumerate().map(|(k, v)| v + 0.05 * ((k as f64) * 0.9).sin()).collect();
        src.set_physical(&p).unwrap();
    }
    src
}

/// Modulator or free-matrix parameters through the mean field and its
/// rescaling to a fixed photon budget.
pub fn source_chain(kind: SourceKind, chain: &'static str, count: usize, seed: u64) -> Vec<Probe> {
    let src = source(kind, seed);
    let w = probe_weights(src.grid.n_pixels());
    let mut g = Graph::new();
    let (leaf, mean) = src.mean_field_node(&mut g).unwrap();
    let scaled = g.normalize_to(mean, 40.0);
    let wc = g.constant(Tensor::vector(w.clone()));
    let prod = g.mul(scaled, wc);
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let grad = g.grad_or_zeros(leaf).into_data();

    let x0 = src.physical();
    let f = |x: &[f64]| {
        let mut s = src.clone();
        s.set_physical(x).unwrap();
        let m = s.mean_field().unwrap().values;
        let t: f64 = m.iter().sum();
        m.iter().zip(&w).map(|(v, w)| 40.0 * v / t * w).sum()
    };
    top_indices(&grad, count)
        .into_iter()
        .map(|k| Probe { chain, index: k, analytic: grad[k], numeric: central_diff(f, &x0, k, H) })
        .collect()
}

fn frames(sets: usize, s: usize, n: usize, seed: u64) -> Vec<FrameSet> {
    let mut r = rng::seeded(seed);
    (0..sets)
        .map(|_| FrameSet {
            n,
            frames: (0..s)
                .map(|_| Frame::new(n, (0..n * n).map(|_| rand::Rng::gen_range(&mut r, 0..4) as f64).collect()).unwrap())
                .collect(),
        })
        .collect()
}

fn stack(sets: &[FrameSet]) -> Tensor {
    let cols = sets[0].n * sets[0].n;
    let data: Vec<f64> = sets.iter().flat_map(|s| s.stacked()).collect();
    Tensor::matrix(data.len() / cols, cols, data)
}

fn small_model(seed: u64) -> TransformerParams {
    let cfg = TransformerConfig { input_dim: 16, d_model: 8, n_heads: 2, head_hidden: 8, n_classes: 3 };
    TransformerParams::init(cfg, &mut rng::seeded(seed)).unwrap()
}

fn model_loss(params: &TransformerParams, x: &Tensor, labels: &[usize], s: usize) -> f64 {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xn = g.constant(x.clone());
    let logits = forward_graph(&mut g, &bound, xn, labels.len(), s).unwrap();
    let l = batch_loss(&mut g, logits, labels).unwrap();
    g.value(l).item()
}

/// Transformer parameters: the largest-gradient entry of each of the first
/// `count` tensors that carry any gradient, plus the input frames.
pub fn transformer_chain(count: usize, seed: u64) -> Vec<Probe> {
    let params = small_model(seed);
    let sets = frames(2, 3, 4, seed + 1);
    let x = stack(&sets);
    let labels = [1usize, 2];
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let xn = g.leaf(x.clone());
    let logits = forward_graph(&mut g, &bound, xn, 2, 3).unwrap();
    let l = batch_loss(&mut g, logits, &labels).unwrap();
    g.backward(l).unwrap();

    let mut probes = Vec::new();
    for (t, id) in bound.ids.iter().enumerate() {
        if probes.len() == count {
            break;
        }
        let grad = g.grad_or_zeros(*id).into_data();
        let k = top_indices(&grad, 1)[0];
        if grad[k].abs() < 1e-6 {
            continue;
        }
        let x0 = params.tensors()[t].data().to_vec();
        let f = |v: &[f64]| {
            let mut p = params.clone();
            p.tensors_mut()[t].data_mut().copy_from_slice(v);
            model_loss(&p, &x, &labels, 3)
        };
        probes.push(Probe { chain: "transformer", index: t * 10_000 + k, analytic: grad[k], numeric: central_diff(f, &x0, k, H) });
    }
    let gx = g.grad_or_zeros(xn).into_data();
    for k in top_indices(&gx, 2) {
        let f = |v: &[f64]| model_loss(&params, &Tensor::matrix(6, 16, v.to_vec()), &labels, 3);
        probes.push(Probe { chain: "transformer-input", index: k, analytic: gx[k], numeric: central_diff(f, x.data(), k, H) });
    }
    probes
}

/// Mean cross-entropy with respect to the logits.
pub fn loss_chain() -> Vec<Probe> {
    let z: Vec<f64> = (0..12).map(|k| ((k as f64) * 1.7).sin() * 2.0).collect();
    let labels = [0usize, 3, 2];
    let build = |x: &[f64]| {
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::matrix(3, 4, x.to_vec()));
        let l = batch_loss(&mut g, leaf, &labels).unwrap();
        (g, leaf, l)
    };
    let (mut g, leaf, l) = build(&z);
    g.backward(l).unwrap();
    let grad = g.grad_or_zeros(leaf).into_data();
    let f = |x: &[f64]| {
        let (g, _, l) = build(x);
        g.value(l).item()
    };
    (0..12)
        .step_by(2)
        .map(|k| Probe { chain: "cross-entropy", index: k, analytic: grad[k], numeric: central_diff(f, &z, k, H) })
        .collect()
}

/// Largest deviation between the straight-through gradient and the exact
/// mean of the incoming frame gradients.
pub fn ste_mismatch() -> f64 {
    let sets = frames(3, 4, 3, 17);
    let mut g = Graph::new();
    let mean = g.leaf(Tensor::zeros(&[9]));
    let node = ste_attach(&mut g, mean, &sets).unwrap();
    let upstream: Vec<f64> = (0..12 * 9).map(|k| ((k as f64) * 0.61).cos()).collect();
    let wc = g.constant(Tensor::matrix(12, 9, upstream.clone()));
    let prod = g.mul(node, wc);
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let got = g.grad_or_zeros(mean).into_data();
    let mut worst: f64 = 0.0;
    for p in 0..9 {
        let mut acc = 0.0;
        for r in 0..12 {
            acc += upstream[r * 9 + p];
        }
        worst = worst.max((got[p] - acc / 12.0).abs());
    }
    worst
}

/// Every probe of the suite.
pub fn all_probes() -> Vec<Probe> {
    let mut p = source_chain(SourceKind::SpdcTrained, "slm-spdc", 8, 3);
    p.extend(source_chain(SourceKind::Coherent, "slm-coherent", 4, 4));
    p.extend(source_chain(SourceKind::SpdcIdeal, "free-s", 4, 5));
    p.extend(transformer_chain(10, 6));
    p.extend(loss_chain());
    p
}
