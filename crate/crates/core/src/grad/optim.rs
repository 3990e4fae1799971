use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub applied: bool,
    pub skipped_nonfinite: bool,
}

/// Plain SGD or Adam over a fixed list of parameter tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Self { kind, lr, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    /// Updates `params` in place. A step whose gradients contain a non-finite
    /// value is skipped entirely and flagged.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<StepReport> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!("parameter of shape {:?} got gradient of shape {:?}", p.shape(), g.shape())));
            }
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Ok(StepReport { applied: false, skipped_nonfinite: true });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                self.step += 1;
                for (p, g) in params.iter_mut().zip(grads) {
                    sgd_step(p.data_mut(), g.data(), self.lr);
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
                    self.v = self.m.clone();
                }
                if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
                    return Err(Error::Dimension("parameter list changed between Adam steps".into()));
                }
                self.step += 1;
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    adam_update(p.data_mut(), g.data(), &mut self.m[k], &mut self.v[k], self.step, self.lr);
                }
            }
        }
        Ok(StepReport { applied: true, skipped_nonfinite: false })
    }
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for k in 0..p.len() {
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
        let mh = m[k] / bc1;
        let vh = v[k] / bc2;
        p[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(2.0);
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        opt.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = Tensor::vector(vec![0.3, -2.0]);
            let g = Tensor::zeros(&[2]);
            let mut opt = OptimizerState::new(kind, 0.5).unwrap();
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[&g]).unwrap();
            }
            assert_eq!(p.data(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = OptimizerState::adam(0.1).unwrap();
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * p.item());
            opt.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(p.item().abs() < 0.05, "p = {}", p.item());
    }

    #[test]
    fn nonfinite_gradient_is_skipped() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let g = Tensor::vector(vec![f64::NAN, 1.0]);
        let mut opt = OptimizerState::adam(0.1).unwrap();
        let report = opt.step(&mut [&mut p], &[&g]).unwrap();
        assert!(report.skipped_nonfinite && !report.applied);
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn negative_learning_rate_rejected() {
        assert!(OptimizerState::sgd(-1.0).is_err());
        assert!(OptimizerState::adam(f64::NAN).is_err());
    }
}
