//! Layers on top of the tape: 3D convolutions, normalization, linear
//! projections and multi-head attention over a designated token axis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Conv3dSpec, Graph, Var};
use crate::params::{Ctx, ParamId, ParamStore, StatUpdate};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f32 = 0.1;
const PROJ_INIT_STD: f32 = 0.02;

/// Checked 3D convolution; cross-correlation, no kernel flip.
pub fn conv3d(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>, spec: &Conv3dSpec) -> Result<Var> {
    g.conv3d(x, weight, bias, spec)
}

/// Grouped convolution with one filter per input channel.
pub fn depthwise_conv3d(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>, spec: &Conv3dSpec) -> Result<Var> {
    let channels = g.shape(x).get(1).copied().unwrap_or(0);
    if spec.groups != channels || !spec.is_depthwise() {
        return Err(Error::invalid(format!(
            "depthwise_conv3d: groups {} must equal channels {channels} (spec {}->{})",
            spec.groups, spec.in_channels, spec.out_channels
        )));
    }
    g.conv3d(x, weight, bias, spec)
}

pub fn gelu(g: &mut Graph, x: Var) -> Result<Var> {
    g.gelu(x)
}

pub fn linear(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    g.linear(x, weight, bias)
}

pub fn layer_norm(g: &mut Graph, x: Var, scale: Var, shift: Var) -> Result<Var> {
    g.layer_norm(x, scale, shift)
}

/// Convolution layer with fan-in scaled uniform init and zero bias.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub spec: Conv3dSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv3d {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: Conv3dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let shape = spec.weight_shape();
        let fan_in: usize = shape[1..].iter().product();
        let bound = 1.0 / (fan_in as f32).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&shape, -bound, bound, rng), true);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]), true));
        Ok(Conv3d { spec, weight, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.p(self.weight);
        let b = self.bias.map(|b| ctx.p(b));
        if self.spec.is_depthwise() && self.spec.in_channels > 1 {
            depthwise_conv3d(&mut ctx.graph, x, w, b, &self.spec)
        } else {
            conv3d(&mut ctx.graph, x, w, b, &self.spec)
        }
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm3d {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm3d {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm3d {
            scale: store.add(format!("{name}.scale"), Tensor::ones(&[channels]), true),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[channels]), false),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (s, b) = (ctx.p(self.scale), ctx.p(self.shift));
        let params = ctx.params();
        let running = (params.get(self.running_mean).data(), params.get(self.running_var).data());
        let mode = ctx.mode;
        let (out, stats) = ctx.graph.batch_norm(x, s, b, running, mode)?;
        if let Some(batch) = stats {
            ctx.stat_updates.push(StatUpdate {
                mean: self.running_mean,
                var: self.running_var,
                momentum: BN_MOMENTUM,
                batch,
            });
        }
        Ok(out)
    }
}

/// `y = x W + b` with `W: (in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), Tensor::trunc_normal(&[d_in, d_out], PROJ_INIT_STD, rng), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]), true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        linear(&mut ctx.graph, x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            scale: store.add(format!("{name}.scale"), Tensor::ones(&[dim]), true),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[dim]), true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (s, b) = (ctx.p(self.scale), ctx.p(self.shift));
        layer_norm(&mut ctx.graph, x, s, b)
    }
}

/// Two-layer GELU MLP applied per token.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::init(store, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::init(store, &format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = gelu(&mut ctx.graph, h)?;
        self.fc2.forward(ctx, h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub embed_dim: usize,
    pub num_heads: usize,
}

impl AttentionSpec {
    pub fn new(embed_dim: usize, num_heads: usize) -> Result<Self> {
        if embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0 {
            return Err(Error::invalid(format!(
                "attention: embed_dim {embed_dim} not divisible by {num_heads} heads"
            )));
        }
        Ok(AttentionSpec { embed_dim, num_heads })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Spatial,
    Temporal,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Spatial => "spatial",
            Stage::Temporal => "temporal",
        }
    }
}

/// One captured softmax weight matrix (queries x keys).
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: usize,
    pub stage: Stage,
    pub head: usize,
    pub batch: usize,
    /// Frame index for spatial attention, spatial token index for temporal.
    pub slice: usize,
    pub weights: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct AttentionSink {
    pub records: Vec<AttentionRecord>,
}

/// Where attention weights computed by one call should be filed.
#[derive(Clone, Copy, Debug)]
pub struct RecordTag {
    pub layer: usize,
    pub stage: Stage,
    /// Sequences per batch element; sequence `g` belongs to batch `g / slices`.
    pub slices: usize,
    /// Added to the local head index (for head-split attention).
    pub head_offset: usize,
}

/// Scaled dot-product attention on already-projected heads.
///
/// `q: (G, S, H, hd)`, `k, v: (G, S', H, hd)`; returns `(G, S, H * hd)`.
pub fn attend(ctx: &mut Ctx, q: Var, k: Var, v: Var, tag: Option<RecordTag>) -> Result<Var> {
    let qs = ctx.graph.shape(q).to_vec();
    let ks = ctx.graph.shape(k).to_vec();
    if qs.len() != 4 || ks.len() != 4 || qs[0] != ks[0] || qs[2..] != ks[2..] || ctx.graph.shape(v) != ks.as_slice() {
        return Err(Error::ShapeMismatch { op: "attend", lhs: qs, rhs: ks });
    }
    let (groups, seq, heads, hd) = (qs[0], qs[1], qs[2], qs[3]);
    let g = &mut ctx.graph;
    let qh = g.permute(q, &[0, 2, 1, 3])?;
    let kt = g.permute(k, &[0, 2, 3, 1])?;
    let vh = g.permute(v, &[0, 2, 1, 3])?;
    let scores = g.matmul(qh, kt)?;
    let scores = g.scale(scores, 1.0 / (hd as f32).sqrt())?;
    let weights = g.softmax(scores, 3)?;
    if let (Some(tag), Some(sink)) = (tag, ctx.sink.as_mut()) {
        let w = ctx.graph.value(weights);
        let kv = ks[1];
        let block = seq * kv;
        for gi in 0..groups {
            for h in 0..heads {
                let off = (gi * heads + h) * block;
                sink.records.push(AttentionRecord {
                    layer: tag.layer,
                    stage: tag.stage,
                    head: tag.head_offset + h,
                    batch: gi / tag.slices,
                    slice: gi % tag.slices,
                    weights: Tensor::from_parts(vec![seq, kv], w.data()[off..off + block].to_vec()),
                });
            }
        }
    }
    let g = &mut ctx.graph;
    let out = g.matmul(weights, vh)?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    g.reshape(out, &[groups, seq, heads * hd])
}

/// Multi-head attention with separate q/k/v/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub spec: AttentionSpec,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: AttentionSpec, rng: &mut R) -> Self {
        let d = spec.embed_dim;
        MultiHeadAttention {
            spec,
            q: Linear::init(store, &format!("{name}.q"), d, d, rng),
            k: Linear::init(store, &format!("{name}.k"), d, d, rng),
            v: Linear::init(store, &format!("{name}.v"), d, d, rng),
            out: Linear::init(store, &format!("{name}.out"), d, d, rng),
        }
    }

    /// Projects `x` into `(.., heads, head_dim)` query/key/value tensors.
    pub fn project_qkv(&self, ctx: &mut Ctx, x: Var) -> Result<[Var; 3]> {
        let mut shape = ctx.graph.shape(x).to_vec();
        if shape.last() != Some(&self.spec.embed_dim) {
            return Err(Error::ShapeMismatch { op: "attention input", lhs: shape, rhs: vec![self.spec.embed_dim] });
        }
        shape.pop();
        shape.extend([self.spec.num_heads, self.spec.head_dim()]);
        let mut out = [x; 3];
        for (slot, proj) in out.iter_mut().zip([&self.q, &self.k, &self.v]) {
            let p = proj.forward(ctx, x)?;
            *slot = ctx.graph.reshape(p, &shape)?;
        }
        Ok(out)
    }

    /// `query: (G, S, D)`, `key`, `value: (G, S', D)` -> `(G, S, D)`.
    pub fn forward(&self, ctx: &mut Ctx, query: Var, key: Var, value: Var, tag: Option<RecordTag>) -> Result<Var> {
        multi_head_attention(ctx, query, key, value, self, tag)
    }
}

/// Multi-head scaled dot-product attention, scale `1 / sqrt(head_dim)`.
pub fn multi_head_attention(
    ctx: &mut Ctx,
    query: Var,
    key: Var,
    value: Var,
    layer: &MultiHeadAttention,
    tag: Option<RecordTag>,
) -> Result<Var> {
    let d = layer.spec.embed_dim;
    let (qs, ks, vs) = (ctx.graph.shape(query).to_vec(), ctx.graph.shape(key).to_vec(), ctx.graph.shape(value).to_vec());
    if qs.len() != 3 || ks.len() != 3 || qs[2] != d || ks[2] != d || vs != ks || qs[0] != ks[0] {
        return Err(Error::ShapeMismatch { op: "multi_head_attention", lhs: qs, rhs: ks });
    }
    let (h, hd) = (layer.spec.num_heads, layer.spec.head_dim());
    let heads = |ctx: &mut Ctx, proj: &Linear, x: Var, s: &[usize]| -> Result<Var> {
        let p = proj.forward(ctx, x)?;
        ctx.graph.reshape(p, &[s[0], s[1], h, hd])
    };
    let q = heads(ctx, &layer.q, query, &qs)?;
    let k = heads(ctx, &layer.k, key, &ks)?;
    let v = heads(ctx, &layer.v, value, &ks)?;
    let mixed = attend(ctx, q, k, v, tag)?;
    layer.out.forward(ctx, mixed)
}
