//! The two factorized transformer blocks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{attend, AttentionSpec, LayerNorm, Mlp, MultiHeadAttention, RecordTag, Stage};
use crate::params::{Ctx, ParamStore};

use super::config::Variant;
use super::embed::TokenGrid;

/// Attention over the `N` tokens of each frame: `(B, T, N, D)` in and out.
fn spatial(ctx: &mut Ctx, attn: &MultiHeadAttention, grid: &TokenGrid, x: Var, layer: usize) -> Result<Var> {
    let [b, t, n, d] = grid.shape();
    let seqs = ctx.graph.reshape(x, &[b * t, n, d])?;
    let tag = RecordTag { layer, stage: Stage::Spatial, slices: t, head_offset: 0 };
    let y = attn.forward(ctx, seqs, seqs, seqs, Some(tag))?;
    ctx.graph.reshape(y, &[b, t, n, d])
}

/// Attention over the `T` tokens at each spatial position.
fn temporal(ctx: &mut Ctx, attn: &MultiHeadAttention, grid: &TokenGrid, x: Var, layer: usize) -> Result<Var> {
    let [b, t, n, d] = grid.shape();
    let g = &mut ctx.graph;
    let seqs = g.permute(x, &[0, 2, 1, 3])?;
    let seqs = g.reshape(seqs, &[b * n, t, d])?;
    let tag = RecordTag { layer, stage: Stage::Temporal, slices: n, head_offset: 0 };
    let y = attn.forward(ctx, seqs, seqs, seqs, Some(tag))?;
    let g = &mut ctx.graph;
    let y = g.reshape(y, &[b, n, t, d])?;
    g.permute(y, &[0, 2, 1, 3])
}

/// Pre-norm spatial attention, then temporal attention, then MLP, each
/// with a residual connection.
#[derive(Clone, Debug)]
pub struct FactorizedSelfBlock {
    pub norm_spatial: LayerNorm,
    pub attn_spatial: MultiHeadAttention,
    pub norm_temporal: LayerNorm,
    pub attn_temporal: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl FactorizedSelfBlock {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: AttentionSpec, mlp_ratio: usize, rng: &mut R) -> Self {
        let d = spec.embed_dim;
        FactorizedSelfBlock {
            norm_spatial: LayerNorm::init(store, &format!("{name}.norm_s"), d),
            attn_spatial: MultiHeadAttention::init(store, &format!("{name}.attn_s"), spec, rng),
            norm_temporal: LayerNorm::init(store, &format!("{name}.norm_t"), d),
            attn_temporal: MultiHeadAttention::init(store, &format!("{name}.attn_t"), spec, rng),
            norm_mlp: LayerNorm::init(store, &format!("{name}.norm_mlp"), d),
            mlp: Mlp::init(store, &format!("{name}.mlp"), d, d * mlp_ratio, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, grid: TokenGrid, layer: usize) -> Result<TokenGrid> {
        let x = grid.tokens;
        let h = self.norm_spatial.forward(ctx, x)?;
        let h = spatial(ctx, &self.attn_spatial, &grid, h, layer)?;
        let x = ctx.graph.add(x, h)?;
        ctx.tap(|| format!("blocks.{layer}.spatial"), x);
        let h = self.norm_temporal.forward(ctx, x)?;
        let h = temporal(ctx, &self.attn_temporal, &grid, h, layer)?;
        let x = ctx.graph.add(x, h)?;
        let h = self.norm_mlp.forward(ctx, x)?;
        let h = self.mlp.forward(ctx, h)?;
        let x = ctx.graph.add(x, h)?;
        Ok(grid.with_tokens(x))
    }
}

/// One pre-norm attention with the heads split: the first half attend within
/// each frame, the second half along time at each position. Both halves read
/// the same normalized input and share the output projection.
#[derive(Clone, Debug)]
pub struct FactorizedDotProductBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl FactorizedDotProductBlock {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: AttentionSpec, mlp_ratio: usize, rng: &mut R) -> Result<Self> {
        if spec.num_heads % 2 != 0 {
            return Err(Error::invalid(format!("dot-product attention needs an even head count, got {}", spec.num_heads)));
        }
        let d = spec.embed_dim;
        Ok(FactorizedDotProductBlock {
            norm_attn: LayerNorm::init(store, &format!("{name}.norm_attn"), d),
            attn: MultiHeadAttention::init(store, &format!("{name}.attn"), spec, rng),
            norm_mlp: LayerNorm::init(store, &format!("{name}.norm_mlp"), d),
            mlp: Mlp::init(store, &format!("{name}.mlp"), d, d * mlp_ratio, rng),
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, grid: TokenGrid, layer: usize) -> Result<TokenGrid> {
        let [b, t, n, d] = grid.shape();
        let heads = self.attn.spec.num_heads;
        let (half, hd) = (heads / 2, self.attn.spec.head_dim());
        let x = grid.tokens;
        let h = self.norm_attn.forward(ctx, x)?;
        // (B, T, N, H, hd) each.
        let [q, k, v] = self.attn.project_qkv(ctx, h)?;

        let split = |ctx: &mut Ctx, p: Var| -> Result<[Var; 2]> {
            let g = &mut ctx.graph;
            let s = g.narrow(p, 3, 0, half)?;
            let s = g.reshape(s, &[b * t, n, half, hd])?;
            let tm = g.narrow(p, 3, half, half)?;
            let tm = g.permute(tm, &[0, 2, 1, 3, 4])?;
            let tm = g.reshape(tm, &[b * n, t, half, hd])?;
            Ok([s, tm])
        };
        let [qs, qt] = split(ctx, q)?;
        let [ks, kt] = split(ctx, k)?;
        let [vs, vt] = split(ctx, v)?;

        let tag = RecordTag { layer, stage: Stage::Spatial, slices: t, head_offset: 0 };
        let ys = attend(ctx, qs, ks, vs, Some(tag))?;
        let tag = RecordTag { layer, stage: Stage::Temporal, slices: n, head_offset: half };
        let yt = attend(ctx, qt, kt, vt, Some(tag))?;

        let g = &mut ctx.graph;
        let ys = g.reshape(ys, &[b, t, n, half * hd])?;
        let yt = g.reshape(yt, &[b, n, t, half * hd])?;
        let yt = g.permute(yt, &[0, 2, 1, 3])?;
        let mixed = g.concat(&[ys, yt], 3)?;
        let y = self.attn.out.forward(ctx, mixed)?;
        debug_assert_eq!(ctx.graph.shape(y), &[b, t, n, d]);
        let x = ctx.graph.add(x, y)?;
        let h = self.norm_mlp.forward(ctx, x)?;
        let h = self.mlp.forward(ctx, h)?;
        let x = ctx.graph.add(x, h)?;
        Ok(grid.with_tokens(x))
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    FactorizedSelf(FactorizedSelfBlock),
    FactorizedDotProduct(FactorizedDotProductBlock),
}

impl Block {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        variant: Variant,
        spec: AttentionSpec,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match variant {
            Variant::FactorizedSelf => Block::FactorizedSelf(FactorizedSelfBlock::init(store, name, spec, mlp_ratio, rng)),
            Variant::FactorizedDotProduct => {
                Block::FactorizedDotProduct(FactorizedDotProductBlock::init(store, name, spec, mlp_ratio, rng)?)
            }
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, grid: TokenGrid, layer: usize) -> Result<TokenGrid> {
        match self {
            Block::FactorizedSelf(b) => b.forward(ctx, grid, layer),
            Block::FactorizedDotProduct(b) => b.forward(ctx, grid, layer),
        }
    }
}
