use super::Gradients;
use crate::error::{Error, Result};
use crate::nn::ModelGraph;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    /// First moments (Adam only), mirroring parameter shapes.
    pub m: Vec<Vec<T>>,
    /// Second moments (Adam only).
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(kind: OptimizerKind, lr: f64, model: &ModelGraph<T>) -> Self {
        let zeros: Vec<Vec<T>> = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam => model.params().iter().map(|p| vec![T::zero(); p.len()]).collect(),
        };
        Self { kind, lr, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update to the model's trainable parameters.
    pub fn step(&mut self, model: &mut ModelGraph<T>, grads: &Gradients<T>) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != grads.tensors.len()
            || params.iter().zip(&grads.tensors).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::shape("gradient shapes do not match the model parameters"));
        }
        let lr = T::from_f64_lossy(self.lr);
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads.tensors) {
                    for (w, &d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
                    return Err(Error::shape("optimizer moments do not match the model parameters"));
                }
                let (b1, b2) = (T::from_f64_lossy(ADAM_BETA1), T::from_f64_lossy(ADAM_BETA2));
                let eps = T::from_f64_lossy(ADAM_EPS);
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
                    for (((w, &d), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (T::one() - b1) * d;
                        *vi = b2 * *vi + (T::one() - b2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
