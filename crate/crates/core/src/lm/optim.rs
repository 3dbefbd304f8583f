use super::transformer::{Attention, Transformer};
use crate::error::{Error, Result};

/// One training sequence: embedding rows per position and the
/// `(position, class)` pairs that contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<(usize, u32)>,
}

/// Momentum SGD with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    velocity: Vec<f64>,
    grad: Vec<f64>,
}

impl Optimizer {
    pub fn new(lr: f64, momentum: f64, clip: f64, num_params: usize) -> Self {
        Self {
            lr,
            momentum,
            clip,
            velocity: vec![0.0; num_params],
            grad: vec![0.0; num_params],
        }
    }

    /// Mean per-target cross-entropy of `batch` and its gradient, without
    /// updating the model.
    pub fn loss_and_grad(
        &mut self,
        model: &Transformer,
        batch: &[TrainExample],
        mask: Attention,
    ) -> Result<f64> {
        let total: usize = batch.iter().map(|e| e.targets.len()).sum();
        if total == 0 {
            return Err(Error::Empty("training targets"));
        }
        self.grad.fill(0.0);
        let scale = 1.0 / total as f64;
        let mut loss = 0.0;
        for ex in batch {
            loss += model.loss_and_grad(&ex.inputs, mask, &ex.targets, scale, &mut self.grad)?;
        }
        Ok(loss * scale)
    }

    /// One update; returns the batch loss measured before the update.
    pub fn step(
        &mut self,
        model: &mut Transformer,
        batch: &[TrainExample],
        mask: Attention,
        step_index: usize,
    ) -> Result<f64> {
        let loss = self.loss_and_grad(model, batch, mask)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: step_index,
                loss,
            });
        }
        let norm = self.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if norm > self.clip { self.clip / norm } else { 1.0 };
        for ((p, v), g) in model
            .params
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(&self.grad)
        {
            *v = self.momentum * *v + g * clip;
            *p -= self.lr * *v;
        }
        Ok(loss)
    }
}
