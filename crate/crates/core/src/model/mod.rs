//! The full network: CNN stem, patch and position embedding, a stack of
//! factorized attention blocks, and a mean-pooled classification head.

mod attention_maps;
mod blocks;
mod checkpoint;
mod cnn;
mod config;
mod embed;

pub use attention_maps::{export_attention_maps, export_frame, Heatmap};
pub use blocks::{Block, FactorizedDotProductBlock, FactorizedSelfBlock};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn::{CnnBlock, CnnModule};
pub use config::{ModelConfig, Variant, STEM_WIDTH};

pub(crate) fn config_keys() -> &'static [&'static str] {
    &config::KEYS
}
pub use embed::{PatchEmbed, PositionEmbed, TokenGrid};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{AttentionSpec, LayerNorm, Linear};
use crate::params::{Ctx, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ConViViT {
    pub config: ModelConfig,
    pub stem: CnnModule,
    pub embed: PatchEmbed,
    pub dpe: PositionEmbed,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl ConViViT {
    /// Builds the architecture and a freshly initialized parameter store.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::build(config, &mut store, rng)?;
        Ok((model, store))
    }

    /// Registers all parameters in `store`, in a fixed order.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stem = CnnModule::init(store, &config, rng)?;
        let embed = PatchEmbed::init(store, stem.out_channels(), config.embed_dim, config.patch, rng)?;
        let dpe = PositionEmbed::init(store, config.embed_dim, rng)?;
        let spec = AttentionSpec::new(config.embed_dim, config.heads)?;
        let blocks = (0..config.depth)
            .map(|i| Block::init(store, &format!("blocks.{i}"), config.variant, spec, config.mlp_ratio, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::init(store, "norm", config.embed_dim);
        let head = Linear::init(store, "head", config.embed_dim, config.num_classes, rng);
        Ok(ConViViT { config, stem, embed, dpe, blocks, norm, head })
    }

    /// Checks a `B x 3 x T x H x W` clip shape against the pipeline.
    pub fn check_input(&self, shape: &[usize]) -> Result<[usize; 3]> {
        if shape.len() != 5 || shape[0] == 0 || shape[1] != self.config.in_channels {
            return Err(Error::invalid(format!("model input must be B x 3 x T x H x W, got {shape:?}")));
        }
        self.config.token_grid(shape[2], shape[3], shape[4])
    }

    /// Tokens (after patch and position embedding) from a stem output.
    pub fn tokens(&self, ctx: &mut Ctx, stem_out: Var) -> Result<TokenGrid> {
        let grid = self.embed.forward(ctx, stem_out)?;
        self.dpe.forward(ctx, grid)
    }

    /// All transformer blocks; T and N are unchanged at every boundary.
    pub fn transformer(&self, ctx: &mut Ctx, mut grid: TokenGrid) -> Result<TokenGrid> {
        for (i, block) in self.blocks.iter().enumerate() {
            let next = block.forward(ctx, grid, i)?;
            if ctx.graph.shape(next.tokens) != grid.shape() {
                return Err(Error::ShapeMismatch {
                    op: "transformer block",
                    lhs: grid.shape().to_vec(),
                    rhs: ctx.graph.shape(next.tokens).to_vec(),
                });
            }
            grid = next;
            ctx.tap(|| format!("blocks.{i}"), grid.tokens);
        }
        Ok(grid)
    }

    /// Final norm, mean over all `T * N` tokens, linear head.
    pub fn classify(&self, ctx: &mut Ctx, grid: TokenGrid) -> Result<Var> {
        let h = self.norm.forward(ctx, grid.tokens)?;
        let [b, t, n, d] = grid.shape();
        let h = ctx.graph.reshape(h, &[b, t * n, d])?;
        let pooled = ctx.graph.mean_axis(h, 1)?;
        self.head.forward(ctx, pooled)
    }

    /// Logits `B x num_classes`.
    pub fn forward(&self, ctx: &mut Ctx, clip: Var) -> Result<Var> {
        self.check_input(ctx.graph.shape(clip))?;
        let stem = self.stem.forward(ctx, clip)?;
        let grid = self.tokens(ctx, stem)?;
        let grid = self.transformer(ctx, grid)?;
        self.classify(ctx, grid)
    }

    /// Forward-only logits for a batch of clips, in eval mode.
    pub fn predict(&self, params: &ParamStore, clips: Tensor) -> Result<Tensor> {
        let mut ctx = Ctx::inference(params);
        let x = ctx.input(clips);
        let logits = self.forward(&mut ctx, x)?;
        Ok(ctx.value(logits).clone())
    }
}
