//! A classifier that only sees the first frame of each clip.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::nn::{gelu, Linear};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Tensor;

use super::config::OptimizerKind;
use super::metrics::{argmax_rows, labels, EvalReport};
use super::optim::Optimizer;

/// Side of the gray thumbnail fed to the probe.
pub const PROBE_SIDE: usize = 16;

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { hidden: 64, epochs: 200, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test: EvalReport,
    pub final_loss: f64,
}

/// Frame 0 averaged over channels and box-downsampled to `PROBE_SIDE`
/// squared features.
pub fn frame0_features(clip: &Clip) -> Result<Vec<f32>> {
    let s = clip.video.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    if h % PROBE_SIDE != 0 || w % PROBE_SIDE != 0 {
        return Err(Error::invalid(format!("probe needs frames divisible by {PROBE_SIDE}, got {h}x{w}")));
    }
    let (fy, fx) = (h / PROBE_SIDE, w / PROBE_SIDE);
    let mut out = vec![0f32; PROBE_SIDE * PROBE_SIDE];
    let norm = 1.0 / (3 * fy * fx) as f32;
    for c in 0..3 {
        let plane = &clip.video.data()[c * t * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                out[(y / fy) * PROBE_SIDE + x / fx] += plane[y * w + x] * norm;
            }
        }
    }
    Ok(out)
}

fn features(clips: &[Clip]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(clips.len() * PROBE_SIDE * PROBE_SIDE);
    for c in clips {
        data.extend(frame0_features(c)?);
    }
    Tensor::new(vec![clips.len(), PROBE_SIDE * PROBE_SIDE], data)
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let f = x.shape()[1];
    let data = idx.iter().flat_map(|&i| x.data()[i * f..(i + 1) * f].iter().copied()).collect();
    Tensor::new(vec![idx.len(), f], data).expect("row gather")
}

/// Trains a one-hidden-layer MLP on first frames with Adam and reports its
/// accuracy on `test`.
pub fn frame0_probe(train: &[Clip], test: &[Clip], num_classes: usize, config: &ProbeConfig) -> Result<ProbeReport> {
    let (xtr, ytr) = (features(train)?, labels(train)?);
    let (xte, yte) = (features(test)?, labels(test)?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let f = PROBE_SIDE * PROBE_SIDE;
    let l1 = Linear::init(&mut store, "probe.fc1", f, config.hidden, &mut rng);
    let l2 = Linear::init(&mut store, "probe.fc2", config.hidden, num_classes, &mut rng);
    let forward = |ctx: &mut Ctx, x: Tensor| -> Result<_> {
        let x = ctx.input(x);
        let h = l1.forward(ctx, x)?;
        let h = gelu(&mut ctx.graph, h)?;
        l2.forward(ctx, h)
    };
    let mut opt = Optimizer::new(OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 }, config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0f64;
        let chunks = order.chunks(config.batch_size.max(1));
        let n = chunks.len();
        for idx in chunks {
            let y: Vec<usize> = idx.iter().map(|&i| ytr[i]).collect();
            let grads = {
                let mut ctx = Ctx::new(&store, NormMode::Train);
                let logits = forward(&mut ctx, rows(&xtr, idx))?;
                let l = ctx.graph.cross_entropy(logits, &y)?;
                sum += ctx.graph.scalar_f64(l)?;
                let g = ctx.graph.backward(l)?;
                ctx.param_grads(&g)
            };
            opt.step(&mut store, &grads)?;
        }
        final_loss = sum / n as f64;
    }
    let predict = |x: Tensor| -> Result<Vec<usize>> {
        let mut ctx = Ctx::inference(&store);
        let logits = forward(&mut ctx, x)?;
        Ok(argmax_rows(ctx.value(logits)))
    };
    let train_report = EvalReport::from_predictions(&predict(xtr)?, &ytr, num_classes)?;
    let test = EvalReport::from_predictions(&predict(xte)?, &yte, num_classes)?;
    Ok(ProbeReport { train_accuracy: train_report.accuracy, test, final_loss })
}
