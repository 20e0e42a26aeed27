use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which factorized attention block the transformer stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Spatial attention, then temporal attention, then MLP.
    FactorizedSelf,
    /// Half the heads spatial, half temporal, on the same input.
    FactorizedDotProduct,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::FactorizedSelf, Variant::FactorizedDotProduct];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::FactorizedSelf => "factorized-self",
            Variant::FactorizedDotProduct => "factorized-dot-product",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(&self) -> &'static str {
        match self {
            Variant::FactorizedSelf => "Factorized Self-attention variant",
            Variant::FactorizedDotProduct => "Factorized Dot-Product attention variant",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized-self" | "self" => Ok(Variant::FactorizedSelf),
            "factorized-dot-product" | "dot-product" => Ok(Variant::FactorizedDotProduct),
            _ => Err(Error::Config(format!(
                "model.variant: unknown value {s:?} (expected factorized-self or factorized-dot-product)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output channels of each CNN block; the first `cnn_blocks` are used.
    pub stem_channels: Vec<usize>,
    pub cnn_blocks: usize,
    /// Patch extents `(pt, ph, pw)` applied to the stem output.
    pub patch: [usize; 3],
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub variant: Variant,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            stem_channels: vec![64, 128],
            cnn_blocks: 2,
            patch: [1, 4, 4],
            embed_dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            variant: Variant::FactorizedSelf,
            num_classes: 4,
        }
    }
}

/// Stem output channels required with two CNN blocks.
pub const STEM_WIDTH: usize = 128;

pub(crate) const KEYS: [&str; 10] = [
    "in_channels",
    "stem_channels",
    "cnn_blocks",
    "patch",
    "embed_dim",
    "depth",
    "heads",
    "mlp_ratio",
    "variant",
    "num_classes",
];

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("model.{key}: expected a non-negative integer, got {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_usize(key, v)).collect()
}

impl ModelConfig {
    /// The small configuration used for end-to-end gradient checks.
    pub fn micro() -> Self {
        ModelConfig { patch: [1, 2, 2], embed_dim: 16, depth: 1, heads: 2, mlp_ratio: 2, ..Default::default() }
    }

    /// Applies one `key=value` setting (key without the `model.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "in_channels" => self.in_channels = parse_usize(key, value)?,
            "stem_channels" => self.stem_channels = parse_list(key, value)?,
            "cnn_blocks" => self.cnn_blocks = parse_usize(key, value)?,
            "patch" => {
                let p = parse_list(key, value)?;
                self.patch = p
                    .try_into()
                    .map_err(|_| Error::Config(format!("model.patch: expected three extents pt,ph,pw, got {value:?}")))?;
            }
            "embed_dim" => self.embed_dim = parse_usize(key, value)?,
            "depth" => self.depth = parse_usize(key, value)?,
            "heads" => self.heads = parse_usize(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse_usize(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "num_classes" => self.num_classes = parse_usize(key, value)?,
            _ => return Err(Error::Config(format!("unknown key model.{key}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        Some(match key {
            "in_channels" => self.in_channels.to_string(),
            "stem_channels" => list(&self.stem_channels),
            "cnn_blocks" => self.cnn_blocks.to_string(),
            "patch" => list(&self.patch),
            "embed_dim" => self.embed_dim.to_string(),
            "depth" => self.depth.to_string(),
            "heads" => self.heads.to_string(),
            "mlp_ratio" => self.mlp_ratio.to_string(),
            "variant" => self.variant.to_string(),
            "num_classes" => self.num_classes.to_string(),
            _ => return None,
        })
    }

    /// `model.key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("model.{k}={}\n", self.get(k).unwrap())).collect()
    }

    /// Parses `model.key=value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            let key = k.trim().strip_prefix("model.").ok_or_else(|| Error::Config(format!("unknown key {}", k.trim())))?;
            config.set(key, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels != 3 {
            return bad(format!("model.in_channels must be 3, got {}", self.in_channels));
        }
        if !(1..=2).contains(&self.cnn_blocks) {
            return bad(format!("model.cnn_blocks must be 1 or 2, got {}", self.cnn_blocks));
        }
        if self.stem_channels.len() < self.cnn_blocks {
            return bad(format!(
                "model.stem_channels lists {} widths but model.cnn_blocks is {}",
                self.stem_channels.len(),
                self.cnn_blocks
            ));
        }
        for &c in &self.stem_channels[..self.cnn_blocks] {
            if c == 0 || c % 4 != 0 {
                return bad(format!("model.stem_channels: width {c} must be a positive multiple of 4"));
            }
        }
        if self.cnn_blocks == 2 && self.stem_channels[1] != STEM_WIDTH {
            return bad(format!(
                "model.stem_channels: a two-block stem must end at {STEM_WIDTH} channels, got {}",
                self.stem_channels[1]
            ));
        }
        if self.patch.contains(&0) {
            return bad(format!("model.patch extents must be positive, got {:?}", self.patch));
        }
        for (key, v) in [("embed_dim", self.embed_dim), ("depth", self.depth), ("heads", self.heads), ("mlp_ratio", self.mlp_ratio)] {
            if v == 0 {
                return bad(format!("model.{key} must be positive"));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!("model.embed_dim {} is not divisible by model.heads {}", self.embed_dim, self.heads));
        }
        if self.variant == Variant::FactorizedDotProduct && self.heads % 2 != 0 {
            return bad(format!("model.heads must be even for the dot-product variant, got {}", self.heads));
        }
        if self.num_classes < 2 {
            return bad(format!("model.num_classes must be at least 2, got {}", self.num_classes));
        }
        Ok(())
    }

    pub fn stem_out_channels(&self) -> usize {
        self.stem_channels[self.cnn_blocks - 1]
    }

    /// Spatial downsampling of the stem (each block halves H and W).
    pub fn stem_stride(&self) -> usize {
        1 << self.cnn_blocks
    }

    /// Token grid `(T, h, w)` for a `T x H x W` clip, or an error naming the
    /// violated divisibility constraint.
    pub fn token_grid(&self, frames: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        let [pt, ph, pw] = self.patch;
        let s = self.stem_stride();
        if frames == 0 || frames % pt != 0 {
            return Err(Error::invalid(format!("clip has {frames} frames, need a positive multiple of patch pt={pt}")));
        }
        for (name, extent, p) in [("height", height, ph), ("width", width, pw)] {
            if extent == 0 || extent % (s * p) != 0 {
                return Err(Error::invalid(format!(
                    "clip {name} {extent} must be a positive multiple of {} (stem stride {s} x patch {p})",
                    s * p
                )));
            }
        }
        Ok([frames / pt, height / (s * ph), width / (s * pw)])
    }

    /// Smallest accepted clip extents `(T, H, W)`.
    pub fn min_clip(&self) -> [usize; 3] {
        let s = self.stem_stride();
        [self.patch[0], s * self.patch[1], s * self.patch[2]]
    }
}
