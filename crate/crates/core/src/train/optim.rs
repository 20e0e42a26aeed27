use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

use super::config::OptimizerKind;

pub const ADAM_EPS: f32 = 1e-8;

/// Optimizer with per-parameter state, indexed like the store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f32,
    steps: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        Optimizer { kind, lr, steps: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every trainable parameter; each needs a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        let mut by_id: Vec<Option<&Tensor>> = vec![None; store.len()];
        for (id, g) in grads {
            by_id[id.index()] = Some(g);
        }
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for &id in &ids {
            let g = by_id[id.index()].ok_or_else(|| Error::invalid(format!("missing gradient for parameter {}", store.entry(id).name)))?;
            if g.shape() != store.get(id).shape() {
                return Err(Error::ShapeMismatch { op: "optimizer step", lhs: store.get(id).shape().to_vec(), rhs: g.shape().to_vec() });
            }
        }
        if self.first.len() != store.len() {
            self.first = store.entries().iter().map(|e| vec![0.0; e.value.numel()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        for id in ids {
            let g = by_id[id.index()].unwrap().data();
            let mut p = store.get(id).to_vec();
            let m = &mut self.first[id.index()];
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    for i in 0..p.len() {
                        m[i] = momentum * m[i] + g[i];
                        p[i] -= self.lr * m[i];
                    }
                }
                OptimizerKind::Adam { beta1, beta2 } => {
                    let v = &mut self.second[id.index()];
                    let c1 = 1.0 - (beta1 as f64).powf(self.steps as f64);
                    let c2 = 1.0 - (beta2 as f64).powf(self.steps as f64);
                    let (c1, c2) = (c1 as f32, c2 as f32);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            store.set(id, Tensor::new(store.get(id).shape().to_vec(), p)?)?;
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm(grads: &[(ParamId, Tensor)]) -> f64 {
    grads.iter().flat_map(|(_, g)| g.data()).map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max: f32) -> f64 {
    let norm = grad_norm(grads);
    if norm > max as f64 {
        let s = (max as f64 / norm) as f32;
        for (_, g) in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}
