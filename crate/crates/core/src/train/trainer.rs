use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::model::{ConViViT, ModelConfig};
use crate::params::{apply_stat_updates, Ctx, ParamStore};

use super::config::TrainConfig;
use super::metrics::{argmax_rows, evaluate, labels};
use super::optim::{clip_grad_norm, grad_norm, Optimizer};

/// Model and parameters initialized from `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<(ConViViT, ParamStore)> {
    ConViViT::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub grad_norm: f64,
    /// Wall-clock time; not part of [`EpochMetrics::to_line`].
    pub seconds: f64,
}

impl EpochMetrics {
    /// Deterministic `key=value` record.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "epoch={} loss={:.6} train_acc={:.4} grad_norm={:.4}",
            self.epoch, self.loss, self.train_accuracy, self.grad_norm
        );
        if let Some(a) = self.test_accuracy {
            s.push_str(&format!(" test_acc={a:.4}"));
        }
        s
    }
}

/// Whether training continues after an epoch callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub struct Trainer<'a> {
    pub model: &'a ConViViT,
    pub store: &'a mut ParamStore,
    pub config: TrainConfig,
    optimizer: Optimizer,
    order_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a ConViViT, store: &'a mut ParamStore, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.lr);
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        order_rng.set_stream(1);
        Ok(Trainer { model, store, config, optimizer, order_rng })
    }

    /// One pass over `clips` in a seed-determined order. Returns
    /// `(mean loss, accuracy, mean grad norm)`.
    pub fn epoch(&mut self, clips: &[Clip]) -> Result<(f64, f64, f64)> {
        let labels = labels(clips)?;
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut self.order_rng);
        let (mut loss_sum, mut norm_sum, mut correct, mut batches) = (0f64, 0f64, 0usize, 0usize);
        for idx in order.chunks(self.config.batch_size) {
            let refs: Vec<&Clip> = idx.iter().map(|&i| &clips[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let x = Clip::batch(&refs)?;
            let (loss, mut grads, updates, predicted) = {
                let mut ctx = Ctx::new(self.store, NormMode::Train);
                let input = ctx.input(x);
                let logits = self.model.forward(&mut ctx, input)?;
                let predicted = argmax_rows(ctx.value(logits));
                let l = ctx.graph.cross_entropy(logits, &y)?;
                let loss = ctx.graph.scalar_f64(l)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!("loss is {loss} at optimizer step {}", self.optimizer.steps() + 1)));
                }
                let g = ctx.graph.backward(l)?;
                (loss, ctx.param_grads(&g), std::mem::take(&mut ctx.stat_updates), predicted)
            };
            let norm = match self.config.clip_norm {
                Some(c) => clip_grad_norm(&mut grads, c),
                None => grad_norm(&grads),
            };
            if !norm.is_finite() {
                return Err(Error::Numerical(format!("gradient norm is {norm} at optimizer step {}", self.optimizer.steps() + 1)));
            }
            self.optimizer.step(self.store, &grads)?;
            apply_stat_updates(self.store, &updates)?;
            loss_sum += loss;
            norm_sum += norm;
            correct += predicted.iter().zip(&y).filter(|(p, l)| p == l).count();
            batches += 1;
        }
        let b = batches.max(1) as f64;
        Ok((loss_sum / b, correct as f64 / clips.len().max(1) as f64, norm_sum / b))
    }

    /// Runs `config.epochs` epochs, evaluating on `test` after each one.
    /// The callback sees every epoch's metrics and can stop early.
    pub fn fit(
        &mut self,
        train: &[Clip],
        test: Option<&[Clip]>,
        mut on_epoch: impl FnMut(&EpochMetrics, &ParamStore) -> Control,
    ) -> Result<Vec<EpochMetrics>> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut history = Vec::new();
        for epoch in 1..=self.config.epochs {
            let start = Instant::now();
            let (loss, train_accuracy, grad_norm) = self.epoch(train)?;
            let test_accuracy = match test {
                Some(t) if !t.is_empty() => Some(evaluate(self.model, self.store, t, self.config.batch_size)?.accuracy),
                _ => None,
            };
            let m = EpochMetrics { epoch, loss, train_accuracy, test_accuracy, grad_norm, seconds: start.elapsed().as_secs_f64() };
            let control = on_epoch(&m, self.store);
            history.push(m);
            if control == Control::Stop {
                break;
            }
        }
        Ok(history)
    }
}
