//! Reverse-mode gradient engine.
//!
//! A [`Graph`] records tensor operations as nodes; each node keeps its value,
//! its parents and a backward rule mapping the output gradient to parent
//! gradients. [`Graph::backward`] orders the nodes reachable from a scalar
//! loss topologically (rejecting cycles) and accumulates gradients into leaf
//! nodes. Intermediate gradients are rebuilt on every call; leaf gradients
//! accumulate until [`Graph::zero_grad`].

mod ops;
pub(crate) use ops::stable_ce;
mod optim;
mod schedule;
mod ste;

pub use optim::{sgd_step, OptimizerKind, OptimizerState, StepReport, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{
    checksum_f64, digital_decrease_fraction, run_alternating, trace_csv, AlternatingModel, EpochRecord, EpochStats,
    ParamGroup, ScheduleConfig,
};
pub use ste::{quantize_phase, ste_attach, ste_sample, SteBatch};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Maps `(output gradient, parent values, output value)` to one optional
/// gradient per parent.
pub type BackwardRule = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    parents: Vec<NodeId>,
    rule: Option<BackwardRule>,
    leaf: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, rule: Option<BackwardRule>, leaf: bool) -> NodeId {
        self.nodes.push(Node { value, grad: None, parents, rule, leaf });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable input; receives accumulated gradients.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Vec::new(), None, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Vec::new(), None, false)
    }

    /// Records an operation with a caller-supplied backward rule. Parent ids
    /// are not checked here; [`Graph::backward`] rejects dangling or cyclic
    /// references.
    pub fn custom(&mut self, parents: Vec<NodeId>, value: Tensor, rule: BackwardRule) -> NodeId {
        self.push(value, parents, Some(rule), false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros if none has been accumulated.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        self.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(self.value(id).shape()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn topo_order(&self, root: NodeId) -> Result<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut mark = vec![Mark::New; self.nodes.len()];
        let mut order = Vec::new();
        let mut stack = vec![(root.0, 0usize)];
        mark[root.0] = Mark::Open;
        while let Some(&(node, next)) = stack.last() {
            let parents = &self.nodes[node].parents;
            if next < parents.len() {
                let p = parents[next].0;
                if let Some(top) = stack.last_mut() {
                    top.1 += 1;
                }
                if p >= self.nodes.len() {
                    return Err(Error::Graph(format!("node {node} references missing node {p}")));
                }
                match mark[p] {
                    Mark::New => {
                        mark[p] = Mark::Open;
                        stack.push((p, 0));
                    }
                    Mark::Open => return Err(Error::Graph(format!("cycle detected through node {p}"))),
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                order.push(node);
                stack.pop();
            }
        }
        Ok(order)
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("unknown loss node {}", loss.0)));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let order = self.topo_order(loss)?;
        let mut pending: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for &idx in order.iter().rev() {
            let Some(grad_out) = pending[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(rule) = &node.rule {
                let parent_values: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let grads = rule(&grad_out, &parent_values, &node.value);
                debug_assert_eq!(grads.len(), node.parents.len());
                for (p, g) in node.parents.iter().zip(grads) {
                    let Some(g) = g else { continue };
                    debug_assert_eq!(g.len(), self.nodes[p.0].value.len());
                    match &mut pending[p.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            if node.leaf {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&grad_out),
                    slot @ None => *slot = Some(grad_out),
                }
            }
        }
        Ok(())
    }
}
