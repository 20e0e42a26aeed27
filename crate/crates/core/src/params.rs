//! Named parameter storage and the per-pass forward context.

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Gradients, Graph, NormMode, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Running statistics are stored here too but are not trained.
    pub trainable: bool,
}

/// Insertion-ordered named tensors. The order is the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                lhs: entry.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].trainable)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.trainable == b.trainable && a.value.bitwise_eq(&b.value))
    }
}

/// Running-statistics update queued by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub momentum: f32,
    pub batch: BatchStats,
}

/// State for one forward pass: the tape, lazily bound parameters, norm
/// mode, queued statistic updates and optional activation captures.
pub struct Ctx<'p> {
    pub graph: Graph,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
    pub mode: NormMode,
    pub stat_updates: Vec<StatUpdate>,
    pub sink: Option<crate::nn::AttentionSink>,
    taps: Option<Vec<(String, Var)>>,
}

impl<'p> Ctx<'p> {
    pub fn new(params: &'p ParamStore, mode: NormMode) -> Self {
        Self::with_graph(params, mode, Graph::new())
    }

    /// Inference context; no gradients are tracked.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self::no_grad(params, NormMode::Eval)
    }

    /// Forward-only context in an explicit norm mode.
    pub fn no_grad(params: &'p ParamStore, mode: NormMode) -> Self {
        Self::with_graph(params, mode, Graph::no_grad())
    }

    fn with_graph(params: &'p ParamStore, mode: NormMode, graph: Graph) -> Self {
        Ctx {
            graph,
            params,
            bound: vec![None; params.len()],
            mode,
            stat_updates: Vec::new(),
            sink: None,
            taps: None,
        }
    }

    pub fn with_sink(mut self) -> Self {
        self.sink = Some(crate::nn::AttentionSink::default());
        self
    }

    pub fn with_taps(mut self) -> Self {
        self.taps = Some(Vec::new());
        self
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// The tape variable for `id`, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.params.entries[id.0];
        let v = if entry.trainable {
            self.graph.param(entry.value.clone())
        } else {
            self.graph.constant(entry.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.graph.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn tap(&mut self, name: impl FnOnce() -> String, v: Var) {
        if let Some(taps) = self.taps.as_mut() {
            taps.push((name(), v));
        }
    }

    pub fn tapped(&self, name: &str) -> Option<&Tensor> {
        self.taps
            .as_ref()?
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| self.graph.value(v))
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.taps.iter().flatten().map(|(n, _)| n.clone()).collect()
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let g = grads.get((*v)?)?;
                Some((ParamId(i), g.clone()))
            })
            .collect()
    }
}

/// Folds queued batch statistics into the running estimates.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) -> Result<()> {
    for u in updates {
        for (id, batch) in [(u.mean, &u.batch.mean), (u.var, &u.batch.var)] {
            let m = u.momentum;
            let old = store.get(id);
            let new = Tensor::from_fn(old.shape(), |i| (1.0 - m) * old.data()[i] + m * batch[i]);
            store.set(id, new)?;
        }
    }
    Ok(())
}
