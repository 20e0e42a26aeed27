//! The 2x2 ablation matrix: attention variant x number of CNN blocks, every
//! cell trained from the same seed, data and budget.

use std::fmt;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

use super::config::TrainConfig;
use super::flops::count_flops;
use super::trainer::{init_model, Control, EpochMetrics, Trainer};

pub const CSV_HEADER: &str = "model,variant,cnn_blocks,params,macs_per_clip,epochs,final_loss,train_accuracy,test_accuracy,status";

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub cnn_blocks: usize,
    pub params: usize,
    pub macs_per_clip: u64,
    /// A numerical failure is kept here instead of aborting the matrix.
    pub outcome: std::result::Result<CellOutcome, String>,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let blocks = if self.cnn_blocks == 1 { "One CNN Block".to_string() } else { format!("{} CNN Blocks", self.cnn_blocks) };
        format!("{} ({blocks})", self.variant.label())
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.test_accuracy)
    }
}

/// Cell configurations in table order: two blocks before one, self before
/// dot-product.
pub fn ablation_configs(base: &ModelConfig) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for blocks in [2, 1] {
        for variant in Variant::ALL {
            out.push(ModelConfig { variant, cnn_blocks: blocks, ..base.clone() });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, variant: Variant, cnn_blocks: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.variant == variant && c.cnn_blocks == cnn_blocks)
    }

    /// Whether the two-block factorized-self cell has the highest test
    /// accuracy; a tie with another cell still counts as highest.
    pub fn self_two_blocks_on_top(&self) -> bool {
        let Some(target) = self.cell(Variant::FactorizedSelf, 2).and_then(|c| c.test_accuracy()) else {
            return false;
        };
        self.cells.iter().filter_map(|c| c.test_accuracy()).all(|a| a <= target)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for c in &self.cells {
            let (epochs, loss, train, test, status) = match &c.outcome {
                Ok(o) => (o.epochs.to_string(), format!("{:.6}", o.final_loss), format!("{:.4}", o.train_accuracy), format!("{:.4}", o.test_accuracy), "ok".to_string()),
                Err(e) => (String::new(), String::new(), String::new(), String::new(), format!("failed: {}", e.replace(',', ";"))),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{epochs},{loss},{train},{test},{status}\n",
                c.label(),
                c.variant,
                c.cnn_blocks,
                c.params,
                c.macs_per_clip
            ));
        }
        s
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<62} {:>9} {:>14} {:>9}", "Model", "Params", "MACs/clip", "Accuracy")?;
        for c in &self.cells {
            let acc = match &c.outcome {
                Ok(o) => format!("{:.2}%", 100.0 * o.test_accuracy),
                Err(_) => "failed".to_string(),
            };
            writeln!(f, "{:<62} {:>9} {:>14} {:>9}", c.label(), c.params, c.macs_per_clip, acc)?;
        }
        write!(
            f,
            "two-block factorized-self on top: {}",
            if self.self_two_blocks_on_top() { "yes" } else { "NO" }
        )
    }
}

/// Trains every cell of the matrix with the same initialization seed,
/// data order and epoch budget. `on_epoch` sees each cell's epochs.
pub fn run_ablation(
    base: &ModelConfig,
    train_config: &TrainConfig,
    train: &[Clip],
    test: &[Clip],
    mut on_epoch: impl FnMut(&ModelConfig, &EpochMetrics),
) -> Result<AblationReport> {
    let extents = match train.first() {
        Some(c) => {
            let s = c.video.shape();
            [s[1], s[2], s[3]]
        }
        None => return Err(Error::invalid("training set is empty")),
    };
    let mut cells = Vec::new();
    for config in ablation_configs(base) {
        let (model, mut store) = init_model(&config, train_config.seed)?;
        let params = store.num_trainable();
        let macs_per_clip = count_flops(&config, 1, extents)?.total(config.variant);
        let mut trainer = Trainer::new(&model, &mut store, train_config.clone())?;
        let outcome = match trainer.fit(train, Some(test), |m, _| {
            on_epoch(&config, m);
            Control::Continue
        }) {
            Ok(history) => {
                let last = history.last().ok_or_else(|| Error::invalid("zero-epoch budget"))?;
                Ok(CellOutcome {
                    epochs: history.len(),
                    final_loss: last.loss,
                    train_accuracy: last.train_accuracy,
                    test_accuracy: last.test_accuracy.unwrap_or(0.0),
                })
            }
            Err(Error::Numerical(m)) => Err(m),
            Err(e) => return Err(e),
        };
        cells.push(AblationCell { variant: config.variant, cnn_blocks: config.cnn_blocks, params, macs_per_clip, outcome });
    }
    Ok(AblationReport { cells })
}
