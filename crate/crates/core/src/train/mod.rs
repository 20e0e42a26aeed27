//! Loss, optimizers, metrics, gradient verification and the analytic cost model.

pub mod ablation;
mod config;
pub mod flops;
pub mod gradcheck;
mod metrics;
mod optim;
pub mod probe;
mod trainer;

pub use config::{OptimizerKind, TrainConfig};
pub use flops::{count_flops, AttentionMacs, FlopReport};
pub use metrics::{argmax_rows, cross_entropy, evaluate, predict, EvalReport};
pub use optim::{clip_grad_norm, grad_norm, Optimizer, ADAM_EPS};
pub use trainer::{init_model, Control, EpochMetrics, Trainer};

pub(crate) fn config_keys() -> &'static [&'static str] {
    &config::KEYS
}
