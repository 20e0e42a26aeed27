use std::fmt;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::ConViViT;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Mean `-log softmax(logits)[label]` over the rows of a `B x K` tensor,
/// computed in f64 via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::no_grad();
    let x = g.constant(logits.clone());
    let loss = g.cross_entropy(x, labels)?;
    g.scalar_f64(loss)
}

/// Index of the largest entry in each row (first one on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty dataset"));
        }
        if predicted.len() != labels.len() {
            return Err(Error::invalid(format!("{} predictions for {} labels", predicted.len(), labels.len())));
        }
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (&p, &l) in predicted.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(Error::invalid(format!("class {} out of range for {num_classes} classes", p.max(l))));
            }
            confusion[l][p] += 1;
        }
        let correct = (0..num_classes).map(|c| confusion[c][c]).sum();
        Ok(EvalReport { accuracy: correct as f64 / labels.len() as f64, correct, total: labels.len(), confusion })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy={:.4} ({}/{})", self.accuracy, self.correct, self.total)?;
        writeln!(f, "confusion (rows: true class, columns: predicted)")?;
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>5}")).collect();
            writeln!(f, "{c:>3} |{}", cells.join(""))?;
        }
        Ok(())
    }
}

fn labels_of(clips: &[Clip]) -> Result<Vec<usize>> {
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| c.label.ok_or_else(|| Error::invalid(format!("clip {i} has no label"))))
        .collect()
}

/// Eval-mode predictions for `clips`, `batch` at a time.
pub fn predict(model: &ConViViT, store: &ParamStore, clips: &[Clip], batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch.max(1)) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let logits = model.predict(store, Clip::batch(&refs)?)?;
        if !logits.is_finite() {
            return Err(Error::Numerical("non-finite logits during evaluation".into()));
        }
        out.extend(argmax_rows(&logits));
    }
    Ok(out)
}

pub fn evaluate(model: &ConViViT, store: &ParamStore, clips: &[Clip], batch: usize) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let labels = labels_of(clips)?;
    let predicted = predict(model, store, clips, batch)?;
    EvalReport::from_predictions(&predicted, &labels, model.config.num_classes)
}

pub(crate) fn labels(clips: &[Clip]) -> Result<Vec<usize>> {
    labels_of(clips)
}
