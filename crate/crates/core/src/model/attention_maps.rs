use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::{AttentionRecord, Stage};

/// Per-frame spatial heatmap in `[0, 1]`, row-major `h x w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
    /// Set when all tokens received the same attention; `values` are then 0.
    pub degenerate: bool,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.w + col]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.values[best] { i } else { best });
        (i / self.w, i % self.w)
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample(&self, fy: usize, fx: usize) -> Heatmap {
        let (h, w) = (self.h * fy, self.w * fx);
        let values = (0..h * w).map(|i| self.get(i / w / fy, i % w / fx)).collect();
        Heatmap { h, w, values, degenerate: self.degenerate }
    }
}

fn spatial_records<'a>(records: &'a [AttentionRecord], layer: usize, head: usize, batch: usize) -> Result<Vec<&'a AttentionRecord>> {
    if records.is_empty() {
        return Err(Error::invalid("attention sink is empty; run a forward pass with a sink first"));
    }
    let spatial: Vec<&AttentionRecord> = records.iter().filter(|r| r.stage == Stage::Spatial).collect();
    let layers: BTreeSet<usize> = spatial.iter().map(|r| r.layer).collect();
    if !layers.contains(&layer) {
        return Err(Error::invalid(format!("layer {layer} out of range; recorded layers: {}", range_list(&layers))));
    }
    let heads: BTreeSet<usize> = spatial.iter().filter(|r| r.layer == layer).map(|r| r.head).collect();
    if !heads.contains(&head) {
        return Err(Error::invalid(format!("head {head} out of range; spatial heads of layer {layer}: {}", range_list(&heads))));
    }
    let mut picked: Vec<&AttentionRecord> =
        spatial.into_iter().filter(|r| r.layer == layer && r.head == head && r.batch == batch).collect();
    if picked.is_empty() {
        return Err(Error::invalid(format!("no records for batch element {batch}")));
    }
    picked.sort_by_key(|r| r.slice);
    Ok(picked)
}

fn range_list(set: &BTreeSet<usize>) -> String {
    match (set.first(), set.last()) {
        (Some(a), Some(b)) if set.len() == b - a + 1 => format!("{a}..={b}"),
        _ => format!("{set:?}"),
    }
}

fn heatmap(record: &AttentionRecord, h: usize, w: usize) -> Result<Heatmap> {
    let s = record.weights.shape();
    let (queries, keys) = (s[0], s[1]);
    if keys != h * w {
        return Err(Error::invalid(format!("attention over {keys} tokens does not fit a {h}x{w} grid")));
    }
    let data = record.weights.data();
    let received: Vec<f64> = (0..keys)
        .map(|k| (0..queries).map(|q| data[q * keys + k] as f64).sum::<f64>() / queries as f64)
        .collect();
    let (lo, hi) = received.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let degenerate = hi - lo <= 1e-6 * hi.abs();
    let values = received
        .iter()
        .map(|&v| if degenerate { 0.0 } else { ((v - lo) / (hi - lo)) as f32 })
        .collect();
    Ok(Heatmap { h, w, values, degenerate })
}

/// Heatmap of attention received per spatial token, for one frame.
pub fn export_frame(records: &[AttentionRecord], h: usize, w: usize, layer: usize, head: usize, batch: usize, frame: usize) -> Result<Heatmap> {
    let picked = spatial_records(records, layer, head, batch)?;
    let record = picked
        .iter()
        .find(|r| r.slice == frame)
        .ok_or_else(|| Error::invalid(format!("frame {frame} out of range; clip has {} frames", picked.len())))?;
    heatmap(record, h, w)
}

/// One heatmap per frame, in time order.
pub fn export_attention_maps(records: &[AttentionRecord], h: usize, w: usize, layer: usize, head: usize, batch: usize) -> Result<Vec<Heatmap>> {
    spatial_records(records, layer, head, batch)?.into_iter().map(|r| heatmap(r, h, w)).collect()
}
