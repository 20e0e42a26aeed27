//! Patch embedding and the convolutional position embedding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Conv3dSpec, Var};
use crate::nn::Conv3d;
use crate::params::{Ctx, ParamStore};

/// A `B x T x N x D` token tensor and the `h x w` layout of its `N` axis.
#[derive(Clone, Copy, Debug)]
pub struct TokenGrid {
    pub tokens: Var,
    pub batch: usize,
    pub frames: usize,
    pub h: usize,
    pub w: usize,
    pub dim: usize,
}

impl TokenGrid {
    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.frames, self.n(), self.dim]
    }

    pub fn with_tokens(self, tokens: Var) -> Self {
        TokenGrid { tokens, ..self }
    }

    /// Wraps an existing `B x T x N x D` variable.
    pub fn from_var(ctx: &Ctx, tokens: Var, h: usize, w: usize) -> Result<Self> {
        let s = ctx.graph.shape(tokens);
        if s.len() != 4 || s[2] != h * w {
            return Err(Error::invalid(format!("token grid {s:?} does not match {h}x{w} spatial tokens")));
        }
        Ok(TokenGrid { tokens, batch: s[0], frames: s[1], h, w, dim: s[3] })
    }

    /// `B x D x T x h x w` view used by convolutions.
    pub fn to_volume(&self, ctx: &mut Ctx) -> Result<Var> {
        let g = &mut ctx.graph;
        let v = g.permute(self.tokens, &[0, 3, 1, 2])?;
        g.reshape(v, &[self.batch, self.dim, self.frames, self.h, self.w])
    }

    /// Inverse of [`TokenGrid::to_volume`].
    pub fn from_volume(ctx: &mut Ctx, volume: Var) -> Result<Self> {
        let s = ctx.graph.shape(volume).to_vec();
        if s.len() != 5 {
            return Err(Error::invalid(format!("token volume must be 5-D, got {s:?}")));
        }
        let (b, d, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let g = &mut ctx.graph;
        let v = g.reshape(volume, &[b, d, t, h * w])?;
        let tokens = g.permute(v, &[0, 2, 3, 1])?;
        Ok(TokenGrid { tokens, batch: b, frames: t, h, w, dim: d })
    }
}

/// Non-overlapping patches via a conv with kernel == stride == patch.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Conv3d,
}

impl PatchEmbed {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, dim: usize, patch: [usize; 3], rng: &mut R) -> Result<Self> {
        let spec = Conv3dSpec::new(channels, dim, patch).stride(patch);
        Ok(PatchEmbed { proj: Conv3d::init(store, "embed", spec, true, rng)? })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<TokenGrid> {
        let s = ctx.graph.shape(x).to_vec();
        let p = self.proj.spec.kernel;
        if s.len() != 5 || s[1] != self.proj.spec.in_channels {
            return Err(Error::ShapeMismatch { op: "patch_embed", lhs: s, rhs: vec![self.proj.spec.in_channels] });
        }
        for (axis, (&extent, &patch)) in ["T", "H", "W"].iter().zip(s[2..].iter().zip(&p)) {
            if extent % patch != 0 {
                return Err(Error::invalid(format!("patch_embed: {axis} extent {extent} is not divisible by patch {patch}")));
            }
        }
        let v = self.proj.forward(ctx, x)?;
        TokenGrid::from_volume(ctx, v)
    }
}

/// `t + depthwise_conv3d(t)` with a 3x3x3 kernel over the `(T, h, w)` layout.
#[derive(Clone, Debug)]
pub struct PositionEmbed {
    pub conv: Conv3d,
}

impl PositionEmbed {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Result<Self> {
        let spec = Conv3dSpec::depthwise(dim, [3; 3]).padding([1; 3]);
        Ok(PositionEmbed { conv: Conv3d::init(store, "dpe", spec, true, rng)? })
    }

    pub fn forward(&self, ctx: &mut Ctx, grid: TokenGrid) -> Result<TokenGrid> {
        let v = grid.to_volume(ctx)?;
        let pos = self.conv.forward(ctx, v)?;
        let pos = TokenGrid::from_volume(ctx, pos)?;
        let tokens = ctx.graph.add(grid.tokens, pos.tokens)?;
        Ok(grid.with_tokens(tokens))
    }
}
