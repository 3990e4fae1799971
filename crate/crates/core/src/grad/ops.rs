//! Differentiable tensor operations.

use super::{Graph, NodeId};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add: shape mismatch");
        let mut out = va.clone();
        out.add_assign(vb);
        self.custom(vec![a, b], out, Box::new(|go, _, _| vec![Some(go.clone()), Some(go.clone())]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "sub: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        self.custom(vec![a, b], out, Box::new(|go, _, _| vec![Some(go.clone()), Some(go.map(|v| -v))]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        self.custom(
            vec![a, b],
            out,
            Box::new(|go, p, _| {
                let ga = go.data().iter().zip(p[1].data()).map(|(g, y)| g * y).collect();
                let gb = go.data().iter().zip(p[0].data()).map(|(g, x)| g * x).collect();
                vec![
                    Some(Tensor::new(p[0].shape().to_vec(), ga)),
                    Some(Tensor::new(p[1].shape().to_vec(), gb)),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|v| v * c);
        self.custom(vec![a], out, Box::new(move |go, _, _| vec![Some(go.map(|v| v * c))]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let out = self.value(a).clone().reshape(shape);
        self.custom(
            vec![a],
            out,
            Box::new(|go, p, _| vec![Some(go.clone().reshape(p[0].shape()))]),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.custom(
            vec![a],
            out,
            Box::new(|go, p, _| vec![Some(Tensor::full(p[0].shape(), go.item()))]),
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of several nodes of identical shape.
    pub fn add_n(&mut self, items: &[NodeId]) -> NodeId {
        assert!(!items.is_empty(), "add_n of nothing");
        let mut out = self.value(items[0]).clone();
        for &id in &items[1..] {
            out.add_assign(self.value(id));
        }
        let k = items.len();
        self.custom(items.to_vec(), out, Box::new(move |go, _, _| vec![Some(go.clone()); k]))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).data().iter().map(|v| v * v).sum());
        self.custom(
            vec![a],
            out,
            Box::new(|go, p, _| {
                let g = go.item();
                vec![Some(p[0].map(|v| 2.0 * g * v))]
            }),
        )
    }

    /// `a[r×k] · b[k×c]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, k) = self.value(a).dims2();
        let (k2, c) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul: inner dimensions differ");
        let out = Tensor::matrix(r, c, matmul(self.value(a).data(), self.value(b).data(), r, k, c));
        self.custom(
            vec![a, b],
            out,
            Box::new(move |go, p, _| {
                let ga = matmul_nt(go.data(), p[1].data(), r, c, k);
                let gb = matmul_tn(p[0].data(), go.data(), r, k, c);
                vec![
                    Some(Tensor::new(p[0].shape().to_vec(), ga)),
                    Some(Tensor::new(p[1].shape().to_vec(), gb)),
                ]
            }),
        )
    }

    /// `a[r×k] · b[c×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (r, k) = self.value(a).dims2();
        let (c, k2) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul_nt: inner dimensions differ");
        let out = Tensor::matrix(r, c, matmul_nt(self.value(a).data(), self.value(b).data(), r, k, c));
        self.custom(
            vec![a, b],
            out,
            Box::new(move |go, p, _| {
                let ga = matmul(go.data(), p[1].data(), r, c, k);
                let gb = matmul_tn(go.data(), p[0].data(), r, c, k);
                vec![
                    Some(Tensor::new(p[0].shape().to_vec(), ga)),
                    Some(Tensor::new(p[1].shape().to_vec(), gb)),
                ]
            }),
        )
    }

    /// Adds a length-`c` bias to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (r, c) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), c, "add_row: bias length");
        let mut out = Tensor::matrix(r, c, self.value(a).data().to_vec());
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.custom(
            vec![a, bias],
            out,
            Box::new(move |go, p, _| {
                let mut gb = vec![0.0; c];
                for row in go.data().chunks(c) {
                    for (g, v) in gb.iter_mut().zip(row) {
                        *g += v;
                    }
                }
                vec![
                    Some(go.clone().reshape(p[0].shape())),
                    Some(Tensor::new(p[1].shape().to_vec(), gb)),
                ]
            }),
        )
    }

    /// Columns `[start, start + len)` of an `r×c` matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.value(a).dims2();
        assert!(start + len <= c, "slice_cols out of range");
        let src = self.value(a).data();
        let data = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        self.custom(
            vec![a],
            Tensor::matrix(r, len, data),
            Box::new(move |go, p, _| {
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    g[i * c + start..i * c + start + len].copy_from_slice(&go.data()[i * len..(i + 1) * len]);
                }
                vec![Some(Tensor::new(p[0].shape().to_vec(), g))]
            }),
        )
    }

    /// Rows `[start, start + len)` of an `r×c` matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.value(a).dims2();
        assert!(start + len <= r, "slice_rows out of range");
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        self.custom(
            vec![a],
            Tensor::matrix(len, c, data),
            Box::new(move |go, p, _| {
                let mut g = vec![0.0; r * c];
                g[start * c..(start + len) * c].copy_from_slice(go.data());
                vec![Some(Tensor::new(p[0].shape().to_vec(), g))]
            }),
        )
    }

    /// Vertical concatenation of matrices sharing a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims2()).collect();
        let c = dims[0].1;
        assert!(dims.iter().all(|d| d.1 == c), "concat_rows: column counts differ");
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.custom(
            parts.to_vec(),
            Tensor::matrix(rows, c, data),
            Box::new(move |go, p, _| {
                let mut off = 0;
                p.iter()
                    .map(|pv| {
                        let len = pv.len();
                        let g = go.data()[off..off + len].to_vec();
                        off += len;
                        Some(Tensor::new(pv.shape().to_vec(), g))
                    })
                    .collect()
            }),
        )
    }

    /// Horizontal concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims2()).collect();
        let r = dims[0].0;
        assert!(dims.iter().all(|d| d.0 == r), "concat_cols: row counts differ");
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &(_, c)) in parts.iter().zip(&dims) {
            let src = self.value(p).data();
            for i in 0..r {
                data[i * total + off..i * total + off + c].copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            off += c;
        }
        self.custom(
            parts.to_vec(),
            Tensor::matrix(r, total, data),
            Box::new(move |go, p, _| {
                let mut off = 0;
                let mut grads = Vec::with_capacity(dims.len());
                for (&(_, c), pv) in dims.iter().zip(p) {
                    let g = (0..r)
                        .flat_map(|i| go.data()[i * total + off..i * total + off + c].iter().copied())
                        .collect();
                    grads.push(Some(Tensor::new(pv.shape().to_vec(), g)));
                    off += c;
                }
                grads
            }),
        )
    }

    /// Row-wise softmax, max-subtracted.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.value(a).dims2();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let _ = r;
        self.custom(
            vec![a],
            out,
            Box::new(move |go, _, y| {
                let mut g = vec![0.0; go.len()];
                for ((gr, yr), out) in go.data().chunks(c).zip(y.data().chunks(c)).zip(g.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(Tensor::new(y.shape().to_vec(), g))]
            }),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (_, c) = self.value(a).dims2();
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.custom(
            vec![a],
            out,
            Box::new(move |go, _, y| {
                let mut g = vec![0.0; go.len()];
                for ((gr, yr), out) in go.data().chunks(c).zip(y.data().chunks(c)).zip(g.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, &gv), &lv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = gv - lv.exp() * total;
                    }
                }
                vec![Some(Tensor::new(y.shape().to_vec(), g))]
            }),
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(gelu);
        self.custom(
            vec![a],
            out,
            Box::new(|go, p, _| {
                let g = go.data().iter().zip(p[0].data()).map(|(g, &x)| g * gelu_deriv(x)).collect();
                vec![Some(Tensor::new(p[0].shape().to_vec(), g))]
            }),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.max(0.0));
        self.custom(
            vec![a],
            out,
            Box::new(|go, p, _| {
                let g = go.data().iter().zip(p[0].data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                vec![Some(Tensor::new(p[0].shape().to_vec(), g))]
            }),
        )
    }

    /// Per-row layer normalization with learned scale and offset.
    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (r, c) = self.value(x).dims2();
        assert_eq!(self.value(gamma).len(), c);
        assert_eq!(self.value(beta).len(), c);
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        self.custom(
            vec![x, gamma, beta],
            Tensor::matrix(r, c, out),
            Box::new(move |go, p, _| {
                let g = go.data();
                let gamma = p[1].data();
                let mut gx = vec![0.0; r * c];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for i in 0..r {
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let k = i * c + j;
                        ggamma[j] += g[k] * xhat[k];
                        gbeta[j] += g[k];
                        let d = g[k] * gamma[j];
                        mean_d += d;
                        mean_dh += d * xhat[k];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        let k = i * c + j;
                        let d = g[k] * gamma[j];
                        gx[k] = inv_std[i] * (d - mean_d - xhat[k] * mean_dh);
                    }
                }
                vec![
                    Some(Tensor::new(p[0].shape().to_vec(), gx)),
                    Some(Tensor::new(p[1].shape().to_vec(), ggamma)),
                    Some(Tensor::new(p[2].shape().to_vec(), gbeta)),
                ]
            }),
        )
    }

    /// Whole-tensor standardization `(x - mean) / (std + eps)` with the
    /// population standard deviation.
    pub fn standardize(&mut self, x: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x).data();
        let n = xv.len() as f64;
        let mu = xv.iter().sum::<f64>() / n;
        let sigma = (xv.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
        let s = sigma + eps;
        let centered: Vec<f64> = xv.iter().map(|v| v - mu).collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), centered.iter().map(|v| v / s).collect());
        self.custom(
            vec![x],
            out,
            Box::new(move |go, p, _| {
                let g = go.data();
                let mean_g = g.iter().sum::<f64>() / n;
                let dot: f64 = g.iter().zip(&centered).map(|(a, b)| a * b).sum();
                let coeff = if sigma > 0.0 { dot / (s * s * sigma * n) } else { 0.0 };
                let gx = g
                    .iter()
                    .zip(&centered)
                    .map(|(&gv, &cv)| (gv - mean_g) / s - cv * coeff)
                    .collect();
                vec![Some(Tensor::new(p[0].shape().to_vec(), gx))]
            }),
        )
    }

    /// `-log softmax(logits)[label]`, max-subtracted.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        let z = self.value(logits).data().to_vec();
        assert!(label < z.len(), "label {label} out of range for {} classes", z.len());
        let (loss, lse) = stable_ce(&z, label);
        let probs: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        self.custom(
            vec![logits],
            Tensor::scalar(loss),
            Box::new(move |go, p, _| {
                let g = go.item();
                let mut grad: Vec<f64> = probs.iter().map(|q| q * g).collect();
                grad[label] -= g;
                vec![Some(Tensor::new(p[0].shape().to_vec(), grad))]
            }),
        )
    }

    /// Rescales a non-negative tensor so its entries sum to `total`.
    pub fn normalize_to(&mut self, a: NodeId, total: f64) -> NodeId {
        let v = self.value(a);
        let s = v.sum();
        assert!(s > 0.0, "normalize_to on a zero tensor");
        let out = v.map(|x| x * total / s);
        self.custom(
            vec![a],
            out,
            Box::new(move |go, _, y| {
                // y = total * a / s ; dy_k/da_j = (total/s)(δ_kj) - y_k / s
                let dot: f64 = go.data().iter().zip(y.data()).map(|(g, yv)| g * yv).sum();
                let gx = go.data().iter().map(|g| (total * g - dot) / s).collect();
                vec![Some(Tensor::new(y.shape().to_vec(), gx))]
            }),
        )
    }
}

/// Cross-entropy and log-sum-exp, accurate when one logit dominates.
pub(crate) fn stable_ce(z: &[f64], label: usize) -> (f64, f64) {
    let top = crate::model::argmax(z);
    let m = z[top];
    let rest: f64 = z.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, v)| (v - m).exp()).sum();
    let tail = rest.ln_1p();
    ((m - z[label]) + tail, m + tail)
}
