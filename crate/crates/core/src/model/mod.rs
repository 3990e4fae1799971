//! Permutation-invariant set classifier over camera frames.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, NodeId};
use crate::rng::Rng;
use crate::sensing::FrameSet;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const INPUT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    /// Flattened frame length `n²`.
    pub input_dim: usize,
    #[serde(default = "default_d")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_hidden")]
    pub head_hidden: usize,
    pub n_classes: usize,
}

fn default_d() -> usize {
    64
}

fn default_heads() -> usize {
    4
}

fn default_hidden() -> usize {
    128
}

impl TransformerConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        Self { input_dim, d_model: 64, n_heads: 4, head_hidden: 128, n_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.d_model == 0 || self.n_classes == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidParameter("transformer dimensions must be positive".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }
}

/// One pre-norm block: self-attention then a GELU feed-forward layer, each
/// with a residual connection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerParams {
    pub config: TransformerConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: [BlockParams; 2],
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
    pub pool_query: Tensor,
    pub pool_wk: Tensor,
    pub pool_wv: Tensor,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect())
}

impl BlockParams {
    fn init(d: usize, ff: usize, rng: &mut Rng) -> Self {
        Self {
            ln1_gamma: Tensor::full(&[d], 1.0),
            ln1_beta: Tensor::zeros(&[d]),
            wq: glorot(rng, d, d),
            wk: glorot(rng, d, d),
            wv: glorot(rng, d, d),
            wo: glorot(rng, d, d),
            bo: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::full(&[d], 1.0),
            ln2_beta: Tensor::zeros(&[d]),
            w1: glorot(rng, d, ff),
            b1: Tensor::zeros(&[ff]),
            w2: glorot(rng, ff, d),
            b2: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.ln1_gamma, &self.ln1_beta, &self.wq, &self.wk, &self.wv, &self.wo, &self.bo,
            &self.ln2_gamma, &self.ln2_beta, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.ln1_gamma, &mut self.ln1_beta, &mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo,
            &mut self.bo, &mut self.ln2_gamma, &mut self.ln2_beta, &mut self.w1, &mut self.b1, &mut self.w2,
            &mut self.b2,
        ]
    }
}

impl TransformerParams {
    pub fn init(config: TransformerConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_dim();
        let embed_w = glorot(rng, config.input_dim, d);
        let blocks = [BlockParams::init(d, ff, rng), BlockParams::init(d, ff, rng)];
        let q_scale = 1.0 / (d as f64).sqrt();
        let pool_query =
            Tensor::matrix(1, d, (0..d).map(|_| q_scale * rng.sample::<f64, _>(StandardNormal)).collect());
        Ok(Self {
            config,
            embed_w,
            embed_b: Tensor::zeros(&[d]),
            blocks,
            final_gamma: Tensor::full(&[d], 1.0),
            final_beta: Tensor::zeros(&[d]),
            pool_query,
            pool_wk: glorot(rng, d, d),
            pool_wv: glorot(rng, d, d),
            head_w1: glorot(rng, d, config.head_hidden),
            head_b1: Tensor::zeros(&[config.head_hidden]),
            head_w2: glorot(rng, config.head_hidden, config.n_classes),
            head_b2: Tensor::zeros(&[config.n_classes]),
        })
    }

    /// Number of self-attention blocks.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed_w, &self.embed_b];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([
            &self.final_gamma, &self.final_beta, &self.pool_query, &self.pool_wk, &self.pool_wv, &self.head_w1,
            &self.head_b1, &self.head_w2, &self.head_b2,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b];
        let [b0, b1] = &mut self.blocks;
        out.extend(b0.tensors_mut());
        out.extend(b1.tensors_mut());
        out.extend([
            &mut self.final_gamma, &mut self.final_beta, &mut self.pool_query, &mut self.pool_wk,
            &mut self.pool_wv, &mut self.head_w1, &mut self.head_b1, &mut self.head_w2, &mut self.head_b2,
        ]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Adds every tensor to `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let ids = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BoundParams { config: self.config, ids }
    }
}

/// Graph handles of a [`TransformerParams`], in [`TransformerParams::tensors`]
/// order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub config: TransformerConfig,
    pub ids: Vec<NodeId>,
}

const BLOCK_LEN: usize = 13;

impl BoundParams {
    fn block(&self, k: usize) -> &[NodeId] {
        &self.ids[2 + k * BLOCK_LEN..2 + (k + 1) * BLOCK_LEN]
    }

    fn tail(&self) -> &[NodeId] {
        &self.ids[2 + 2 * BLOCK_LEN..]
    }
}

/// Multi-head scaled dot-product attention of `q_in` (rows) over `kv_in`.
fn attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
    let (_, d) = g.value(q).dims2();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let outs: Vec<NodeId> = (0..heads)
        .map(|h| {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let scaled = g.scale(scores, scale);
            let weights = g.softmax_rows(scaled);
            g.matmul(weights, vh)
        })
        .collect();
    if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

fn block_forward(g: &mut Graph, p: &[NodeId], x: NodeId, sets: usize, s: usize, heads: usize) -> NodeId {
    let h = g.layer_norm_rows(x, p[0], p[1], LN_EPS);
    let q = g.matmul(h, p[2]);
    let k = g.matmul(h, p[3]);
    let v = g.matmul(h, p[4]);
    let per_set: Vec<NodeId> = (0..sets)
        .map(|b| {
            let qb = g.slice_rows(q, b * s, s);
            let kb = g.slice_rows(k, b * s, s);
            let vb = g.slice_rows(v, b * s, s);
            attention(g, qb, kb, vb, heads)
        })
        .collect();
    let att = if sets == 1 { per_set[0] } else { g.concat_rows(&per_set) };
    let proj = g.matmul(att, p[5]);
    let proj = g.add_row(proj, p[6]);
    let x = g.add(x, proj);
    let h = g.layer_norm_rows(x, p[7], p[8], LN_EPS);
    let f = g.matmul(h, p[9]);
    let f = g.add_row(f, p[10]);
    let f = g.gelu(f);
    let f = g.matmul(f, p[11]);
    let f = g.add_row(f, p[12]);
    g.add(x, f)
}

/// Logits for `sets` frame sets of `s` frames each, stacked row-wise in
/// `frames` (`sets·s × n²`). Returns a `sets × n_classes` node.
pub fn forward_graph(g: &mut Graph, params: &BoundParams, frames: NodeId, sets: usize, s: usize) -> Result<NodeId> {
    let cfg = params.config;
    let (rows, cols) = g.value(frames).dims2();
    if s == 0 || sets == 0 {
        return Err(Error::Empty("frame set is empty".into()));
    }
    if rows != sets * s || cols != cfg.input_dim {
        return Err(Error::Dimension(format!(
            "expected {}x{} frames, got {rows}x{cols}",
            sets * s,
            cfg.input_dim
        )));
    }
    let standardized: Vec<NodeId> = (0..sets)
        .map(|b| {
            let x = g.slice_rows(frames, b * s, s);
            g.standardize(x, INPUT_EPS)
        })
        .collect();
    let x = if sets == 1 { standardized[0] } else { g.concat_rows(&standardized) };
    let x = g.matmul(x, params.ids[0]);
    let mut x = g.add_row(x, params.ids[1]);
    for k in 0..2 {
        x = block_forward(g, params.block(k), x, sets, s, cfg.n_heads);
    }
    let t = params.tail();
    let x = g.layer_norm_rows(x, t[0], t[1], LN_EPS);
    let keys = g.matmul(x, t[3]);
    let values = g.matmul(x, t[4]);
    let pooled: Vec<NodeId> = (0..sets)
        .map(|b| {
            let kb = g.slice_rows(keys, b * s, s);
            let vb = g.slice_rows(values, b * s, s);
            attention(g, t[2], kb, vb, cfg.n_heads)
        })
        .collect();
    let z = if sets == 1 { pooled[0] } else { g.concat_rows(&pooled) };
    let h = g.matmul(z, t[5]);
    let h = g.add_row(h, t[6]);
    let h = g.gelu(h);
    let out = g.matmul(h, t[7]);
    Ok(g.add_row(out, t[8]))
}

/// Mean cross-entropy over the rows of a `B × k` logits node.
pub fn batch_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (rows, k) = g.value(logits).dims2();
    if rows != labels.len() {
        return Err(Error::Dimension(format!("{rows} logit rows but {} labels", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidParameter(format!("label {l} out of range for {k} classes")));
    }
    let losses: Vec<NodeId> = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| {
            let row = g.slice_rows(logits, b, 1);
            g.cross_entropy(row, l)
        })
        .collect();
    let total = g.add_n(&losses);
    Ok(g.scale(total, 1.0 / labels.len() as f64))
}

/// Logits of a single frame set.
pub fn forward(set: &FrameSet, params: &TransformerParams) -> Result<Vec<f64>> {
    Ok(forward_batch(std::slice::from_ref(set), params)?.remove(0))
}

/// Logits of several equally sized sets.
pub fn forward_batch(sets: &[FrameSet], params: &TransformerParams) -> Result<Vec<Vec<f64>>> {
    let s = sets.first().map(|x| x.len()).unwrap_or(0);
    if sets.iter().any(|x| x.len() != s) {
        return Err(Error::Dimension("sets in a batch must share their size".into()));
    }
    let data: Vec<f64> = sets.iter().flat_map(|x| x.stacked()).collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let frames = g.constant(Tensor::matrix(sets.len() * s, params.config.input_dim, data));
    let logits = forward_graph(&mut g, &bound, frames, sets.len(), s)?;
    Ok(g.value(logits).data().chunks(params.config.n_classes).map(|c| c.to_vec()).collect())
}

/// Learned-query attention pooling of `s × d` tokens.
pub fn attention_pool(tokens: &[f64], s: usize, query: &[f64], wk: &[f64], wv: &[f64], heads: usize) -> Result<Vec<f64>> {
    let d = query.len();
    if s == 0 {
        return Err(Error::Empty("no tokens to pool".into()));
    }
    if tokens.len() != s * d || wk.len() != d * d || wv.len() != d * d || heads == 0 || d % heads != 0 {
        return Err(Error::Dimension("attention pooling shapes are inconsistent".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(s, d, tokens.to_vec()));
    let q = g.constant(Tensor::matrix(1, d, query.to_vec()));
    let wk = g.constant(Tensor::matrix(d, d, wk.to_vec()));
    let wv = g.constant(Tensor::matrix(d, d, wv.to_vec()));
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let out = attention(&mut g, q, k, v, heads);
    Ok(g.value(out).data().to_vec())
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidParameter(format!("label {label} out of range for {} classes", logits.len())));
    }
    Ok(crate::grad::stable_ce(logits, label).0)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sensing::Frame;

    fn small() -> TransformerParams {
        let cfg = TransformerConfig { input_dim: 16, d_model: 8, n_heads: 2, head_hidden: 6, n_classes: 3 };
        TransformerParams::init(cfg, &mut rng::seeded(5)).unwrap()
    }

    fn random_set(s: usize, seed: u64) -> FrameSet {
        let mut r = rng::seeded(seed);
        let frames = (0..s)
            .map(|_| Frame::new(4, (0..16).map(|_| r.gen_range(0..4) as f64).collect()).unwrap())
            .collect();
        FrameSet::new(4, frames).unwrap()
    }

    #[test]
    fn exactly_two_blocks() {
        let p = small();
        assert_eq!(p.depth(), 2);
        assert_eq!(p.tensors().len(), 2 + 2 * BLOCK_LEN + 9);
        assert_eq!(p.tensors().len(), small().tensors_mut().len());
    }

    #[test]
    fn duplicated_frame_matches_single() {
        let p = small();
        let one = random_set(1, 3);
        let four = FrameSet::new(4, vec![one.frames[0].clone(); 4]).unwrap();
        let a = forward(&one, &p).unwrap();
        let b = forward(&four, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_individual_sets() {
        let p = small();
        let sets = [random_set(3, 1), random_set(3, 2)];
        let batch = forward_batch(&sets, &p).unwrap();
        for (set, row) in sets.iter().zip(&batch) {
            assert_eq!(&forward(set, &p).unwrap(), row);
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(forward(&FrameSet { n: 4, frames: vec![] }, &small()).is_err());
    }

    #[test]
    fn loss_values() {
        assert!((cross_entropy(&[10.0, -10.0], 0).unwrap() - 2.061_153_620_314_381e-9).abs() < 1e-20);
        assert!((cross_entropy(&[0.3; 5], 2).unwrap() - 5f64.ln()).abs() < 1e-15);
        let a = cross_entropy(&[1.0, 2.0, -0.5], 1).unwrap();
        let b = cross_entropy(&[101.0, 102.0, 99.5], 1).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(cross_entropy(&[1.0], 1).is_err());
    }

    #[test]
    fn pool_single_token_is_value_projection() {
        let d = 4;
        let tok = [0.5, -1.0, 2.0, 0.1];
        let wv: Vec<f64> = (0..16).map(|k| k as f64 * 0.1 - 0.7).collect();
        let wk = vec![0.3; 16];
        let out = attention_pool(&tok, 1, &[1.0, 0.0, -1.0, 2.0], &wk, &wv, 2).unwrap();
        for c in 0..d {
            let expect: f64 = (0..d).map(|r| tok[r] * wv[r * d + c]).sum();
            assert!((out[c] - expect).abs() < 1e-14);
        }
    }
}
