//! Convolutional stem: depthwise, pointwise reduce, strided 5x5x5, pointwise
//! expand, with a projected residual.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Conv3dSpec, Var};
use crate::nn::{self, BatchNorm3d, Conv3d};
use crate::params::{Ctx, ParamStore};

use super::config::ModelConfig;

#[derive(Clone, Debug)]
pub struct CnnBlock {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depthwise: Conv3d,
    pub bn1: BatchNorm3d,
    pub reduce: Conv3d,
    pub spatial: Conv3d,
    pub bn2: BatchNorm3d,
    pub expand: Conv3d,
    pub skip: Conv3d,
}

impl CnnBlock {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let mid = c_out / 4;
        let down = [1, 2, 2];
        Ok(CnnBlock {
            in_channels: c_in,
            out_channels: c_out,
            depthwise: Conv3d::init(store, &format!("{name}.dw"), Conv3dSpec::depthwise(c_in, [3; 3]).padding([1; 3]), true, rng)?,
            bn1: BatchNorm3d::init(store, &format!("{name}.bn1"), c_in),
            reduce: Conv3d::init(store, &format!("{name}.reduce"), Conv3dSpec::new(c_in, mid, [1; 3]), true, rng)?,
            spatial: Conv3d::init(
                store,
                &format!("{name}.conv5"),
                Conv3dSpec::new(mid, mid, [5; 3]).stride(down).padding([2; 3]),
                true,
                rng,
            )?,
            bn2: BatchNorm3d::init(store, &format!("{name}.bn2"), mid),
            expand: Conv3d::init(store, &format!("{name}.expand"), Conv3dSpec::new(mid, c_out, [1; 3]), true, rng)?,
            skip: Conv3d::init(store, &format!("{name}.skip"), Conv3dSpec::new(c_in, c_out, [1; 3]).stride(down), true, rng)?,
        })
    }

    /// `B x C_in x T x H x W` -> `B x C_out x T x H/2 x W/2`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != self.in_channels {
            return Err(Error::ShapeMismatch { op: "cnn block input", lhs: shape, rhs: vec![self.in_channels] });
        }
        let h = self.depthwise.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = nn::gelu(&mut ctx.graph, h)?;
        let h = self.reduce.forward(ctx, h)?;
        let h = self.spatial.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let h = nn::gelu(&mut ctx.graph, h)?;
        let h = self.expand.forward(ctx, h)?;
        let r = self.skip.forward(ctx, x)?;
        ctx.graph.add(h, r)
    }
}

/// One or two CNN blocks turning an RGB clip into a feature volume.
#[derive(Clone, Debug)]
pub struct CnnModule {
    pub blocks: Vec<CnnBlock>,
}

impl CnnModule {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c_in = config.in_channels;
        for (i, &c_out) in config.stem_channels[..config.cnn_blocks].iter().enumerate() {
            blocks.push(CnnBlock::init(store, &format!("stem.{i}"), c_in, c_out, rng)?);
            c_in = c_out;
        }
        Ok(CnnModule { blocks })
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map(|b| b.out_channels).unwrap_or(0)
    }

    /// Runs every block, tapping each output as `stem.{i}`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x);
        if shape.len() != 5 || shape[1] != 3 {
            return Err(Error::invalid(format!("stem expects a B x 3 x T x H x W clip, got {shape:?}")));
        }
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(ctx, h)?;
            ctx.tap(|| format!("stem.{i}"), h);
        }
        Ok(h)
    }
}
