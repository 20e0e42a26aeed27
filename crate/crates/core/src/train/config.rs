use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `v <- mu v + g; p <- p - lr v`.
    Sgd { momentum: f32 },
    /// Bias-corrected Adam with epsilon 1e-8.
    Adam { beta1: f32, beta2: f32 },
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 },
            lr: 5e-4,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            clip_norm: None,
        }
    }
}

pub(crate) const KEYS: [&str; 9] = ["optimizer", "lr", "momentum", "beta1", "beta2", "batch_size", "epochs", "seed", "clip_norm"];

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("train.{key}: expected {what}, got {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "optimizer" => {
                self.optimizer = match v {
                    "sgd" => OptimizerKind::Sgd { momentum: 0.9 },
                    "adam" => OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 },
                    _ => return Err(Error::Config(format!("train.optimizer: unknown value {v:?} (expected sgd or adam)"))),
                }
            }
            "lr" => self.lr = parse(key, v, "a number")?,
            "momentum" => match &mut self.optimizer {
                OptimizerKind::Sgd { momentum } => *momentum = parse(key, v, "a number")?,
                _ => return Err(Error::Config("train.momentum only applies to train.optimizer=sgd (set the optimizer first)".into())),
            },
            "beta1" | "beta2" => match &mut self.optimizer {
                OptimizerKind::Adam { beta1, beta2 } => {
                    let b = parse(key, v, "a number")?;
                    if key == "beta1" {
                        *beta1 = b
                    } else {
                        *beta2 = b
                    }
                }
                _ => return Err(Error::Config(format!("train.{key} only applies to train.optimizer=adam (set the optimizer first)"))),
            },
            "batch_size" => self.batch_size = parse(key, v, "a positive integer")?,
            "epochs" => self.epochs = parse(key, v, "a non-negative integer")?,
            "seed" => self.seed = parse(key, v, "an unsigned integer")?,
            "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(parse(key, v, "a number or none")?) },
            _ => return Err(Error::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }

    /// Current value of `key`; optimizer-specific keys are `None` for the
    /// other optimizer.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match (key, self.optimizer) {
            ("optimizer", o) => o.to_string(),
            ("lr", _) => self.lr.to_string(),
            ("momentum", OptimizerKind::Sgd { momentum }) => momentum.to_string(),
            ("beta1", OptimizerKind::Adam { beta1, .. }) => beta1.to_string(),
            ("beta2", OptimizerKind::Adam { beta2, .. }) => beta2.to_string(),
            ("batch_size", _) => self.batch_size.to_string(),
            ("epochs", _) => self.epochs.to_string(),
            ("seed", _) => self.seed.to_string(),
            ("clip_norm", _) => self.clip_norm.map_or("none".into(), |c| c.to_string()),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        match self.optimizer {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return bad(format!("train.momentum must be in [0, 1), got {momentum}"))
            }
            OptimizerKind::Adam { beta1, beta2 } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) => {
                return bad(format!("train.beta1/beta2 must be in [0, 1), got {beta1}/{beta2}"))
            }
            _ => {}
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("train.clip_norm must be positive or none, got {c}"));
            }
        }
        Ok(())
    }
}
