//! Analytic multiply-accumulate counts per stage.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::Conv3dSpec;
use crate::model::{ConViViT, ModelConfig, Variant};
use crate::params::ParamStore;

pub const ACCOUNTING: &str = "\
# unit: MAC (one multiply-accumulate = one FLOP pair); norms, activations, softmax and adds are not counted
# conv: B * C_out * out_voxels * (C_in / groups) * kt * kh * kw
# per block, S = sequence length, D = embed dim: projections 4*S*D^2 (q, k, v, out), mixing 2*S^2*D (QK^T and AV)
# factorized-self:        spatial B*T*(2*N^2*D + 4*N*D^2), temporal B*N*(2*T^2*D + 4*T*D^2)
# factorized-dot-product: projections 4*B*T*N*D^2 split evenly, spatial mixing B*T*N^2*D, temporal mixing B*N*T^2*D (half the heads each)
# joint baseline:         B*(4*T*N*D^2 + 2*(T*N)^2*D)
# mlp: 2*B*T*N*D*hidden; head: B*D*K; all attention and mlp terms are multiplied by depth";

pub const CSV_HEADER: &str = "variant,stem,patch_embed,spatial_attention,temporal_attention,joint_attention,mlp,head,total";

/// Attention MACs of one variant, summed over all blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionMacs {
    pub spatial: u64,
    pub temporal: u64,
    pub joint: u64,
}

impl AttentionMacs {
    pub fn total(&self) -> u64 {
        self.spatial + self.temporal + self.joint
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub batch: usize,
    /// Token grid `(T, N, D)`.
    pub frames: usize,
    pub tokens: usize,
    pub dim: usize,
    pub depth: usize,
    pub variant: Variant,
    pub stem: u64,
    /// Patch projection plus position-embedding conv.
    pub patch_embed: u64,
    pub mlp: u64,
    pub head: u64,
    pub factorized_self: AttentionMacs,
    pub factorized_dot_product: AttentionMacs,
    pub joint: AttentionMacs,
    /// Token-mixing (QK^T and AV) MACs of the factorized-self blocks.
    pub spatial_mixing: u64,
    pub temporal_mixing: u64,
}

impl FlopReport {
    fn shared(&self) -> u64 {
        self.stem + self.patch_embed + self.mlp + self.head
    }

    pub fn attention(&self, variant: Variant) -> AttentionMacs {
        match variant {
            Variant::FactorizedSelf => self.factorized_self,
            Variant::FactorizedDotProduct => self.factorized_dot_product,
        }
    }

    pub fn total(&self, variant: Variant) -> u64 {
        self.shared() + self.attention(variant).total()
    }

    /// Same network with joint attention over all `T * N` tokens.
    pub fn joint_total(&self) -> u64 {
        self.shared() + self.joint.total()
    }

    fn rows(&self) -> Vec<(&'static str, AttentionMacs)> {
        vec![
            (Variant::FactorizedSelf.as_str(), self.factorized_self),
            (Variant::FactorizedDotProduct.as_str(), self.factorized_dot_product),
            ("joint", self.joint),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for (name, a) in self.rows() {
            s.push_str(&format!(
                "{name},{},{},{},{},{},{},{},{}\n",
                self.stem,
                self.patch_embed,
                a.spatial,
                a.temporal,
                a.joint,
                self.mlp,
                self.head,
                self.shared() + a.total()
            ));
        }
        s
    }
}

impl fmt::Display for FlopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{ACCOUNTING}")?;
        writeln!(f, "# B={} T={} N={} D={} depth={}", self.batch, self.frames, self.tokens, self.dim, self.depth)?;
        writeln!(f, "{:<24}{:>16}{:>16}{:>16}{:>16}", "variant", "spatial", "temporal", "joint", "total")?;
        for (name, a) in self.rows() {
            writeln!(f, "{name:<24}{:>16}{:>16}{:>16}{:>16}", a.spatial, a.temporal, a.joint, self.shared() + a.total())?;
        }
        writeln!(f, "shared: stem={} patch_embed={} mlp={} head={}", self.stem, self.patch_embed, self.mlp, self.head)
    }
}

fn conv_macs(spec: &Conv3dSpec, input: [usize; 3], batch: usize) -> Result<(u64, [usize; 3])> {
    let out = spec.output_extents(input)?;
    let per_out = (spec.in_channels / spec.groups) * spec.kernel.iter().product::<usize>();
    let n = batch * spec.out_channels * out.iter().product::<usize>() * per_out;
    Ok((n as u64, out))
}

/// MAC counts for `batch` clips of `clip = (T, H, W)` frames.
pub fn count_flops(config: &ModelConfig, batch: usize, clip: [usize; 3]) -> Result<FlopReport> {
    let [t, h, w] = config.token_grid(clip[0], clip[1], clip[2])?;
    // The architecture is built only to read its conv geometry.
    let mut store = ParamStore::new();
    let model = ConViViT::build(config.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;

    let mut stem = 0;
    let mut extents = clip;
    for block in &model.stem.blocks {
        let (dw, e1) = conv_macs(&block.depthwise.spec, extents, batch)?;
        let (reduce, e2) = conv_macs(&block.reduce.spec, e1, batch)?;
        let (spatial, e3) = conv_macs(&block.spatial.spec, e2, batch)?;
        let (expand, _) = conv_macs(&block.expand.spec, e3, batch)?;
        let (skip, _) = conv_macs(&block.skip.spec, extents, batch)?;
        stem += dw + reduce + spatial + expand + skip;
        extents = e3;
    }
    let (embed, grid) = conv_macs(&model.embed.proj.spec, extents, batch)?;
    let (dpe, _) = conv_macs(&model.dpe.conv.spec, grid, batch)?;

    let (b, t, n, d, l) = (batch as u64, t as u64, (h * w) as u64, config.embed_dim as u64, config.depth as u64);
    let hidden = d * config.mlp_ratio as u64;
    let spatial_mixing = l * b * t * 2 * n * n * d;
    let temporal_mixing = l * b * n * 2 * t * t * d;
    let proj = l * b * 4 * t * n * d * d;
    let s = t * n;
    Ok(FlopReport {
        batch,
        frames: t as usize,
        tokens: n as usize,
        dim: d as usize,
        depth: l as usize,
        variant: config.variant,
        stem,
        patch_embed: embed + dpe,
        mlp: l * b * 2 * s * d * hidden,
        head: b * d * config.num_classes as u64,
        factorized_self: AttentionMacs { spatial: spatial_mixing + proj, temporal: temporal_mixing + proj, joint: 0 },
        factorized_dot_product: AttentionMacs { spatial: spatial_mixing / 2 + proj / 2, temporal: temporal_mixing / 2 + proj / 2, joint: 0 },
        joint: AttentionMacs { spatial: 0, temporal: 0, joint: l * b * (4 * s * d * d + 2 * s * s * d) },
        spatial_mixing,
        temporal_mixing,
    })
}
