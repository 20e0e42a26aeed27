//! Labelled clips, the synthetic moving-blob task, and file formats for
//! clips, image frames and dataset manifests.

mod image;
mod manifest;
mod synth;

pub use image::{colormap, load_frames_dir, read_ppm, save_feature_pgm, save_heatmap_ppm, write_ppm, Image};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use synth::{centroid, generate_clip, generate_dataset, SynthTaskSpec, DIRECTIONS};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_exact_or, read_u32, write_u32};
use crate::tensor::Tensor;

pub const CLIP_MAGIC: &[u8; 5] = b"CVVTC";
pub const CLIP_VERSION: u32 = 1;

/// A `3 x T x H x W` video with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub video: Tensor,
    pub label: Option<usize>,
    /// Generator seed, for synthetic clips.
    pub seed: Option<u64>,
}

impl Clip {
    pub fn new(video: Tensor) -> Result<Self> {
        let s = video.shape();
        if s.len() != 4 || s[0] != 3 {
            return Err(Error::invalid(format!("clip must be 3 x T x H x W, got {s:?}")));
        }
        Ok(Clip { video, label: None, seed: None })
    }

    pub fn frames(&self) -> usize {
        self.video.shape()[1]
    }

    /// Stacks clips of one shape into a `B x 3 x T x H x W` batch.
    pub fn batch(clips: &[&Clip]) -> Result<Tensor> {
        let first = clips.first().ok_or_else(|| Error::invalid("cannot batch zero clips"))?;
        let shape = first.video.shape().to_vec();
        let mut data = Vec::with_capacity(clips.len() * first.video.numel());
        for c in clips {
            if c.video.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch { op: "clip batch", lhs: shape, rhs: c.video.shape().to_vec() });
            }
            data.extend_from_slice(c.video.data());
        }
        let mut full = vec![clips.len()];
        full.extend(shape);
        Tensor::new(full, data)
    }
}

pub fn write_clip<W: Write>(mut out: W, video: &Tensor) -> std::io::Result<()> {
    out.write_all(CLIP_MAGIC)?;
    write_u32(&mut out, CLIP_VERSION)?;
    for &e in video.shape() {
        write_u32(&mut out, e as u32)?;
    }
    let mut bytes = Vec::with_capacity(video.numel() * 4);
    for v in video.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    out.flush()
}

pub fn read_clip<R: Read>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 5];
    read_exact_or(&mut input, &mut magic, "clip magic")?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Format(format!("bad clip magic {magic:?}, expected \"CVVTC\"")));
    }
    let version = read_u32(&mut input, "clip version")?;
    if version != CLIP_VERSION {
        return Err(Error::Format(format!("clip version {version} is not supported (expected {CLIP_VERSION})")));
    }
    let mut shape = [0usize; 4];
    for (e, name) in shape.iter_mut().zip(["C", "T", "H", "W"]) {
        *e = read_u32(&mut input, &format!("clip extent {name}"))? as usize;
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= isize::MAX as usize))
        .ok_or_else(|| Error::Format(format!("clip extents {shape:?} overflow")))?;
    let mut bytes = Vec::new();
    input
        .take(count as u64 * 4)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Format(format!("read failed in clip data: {e}")))?;
    if bytes.len() < count * 4 {
        return Err(Error::Format(format!("truncated file: missing clip data ({} of {} bytes)", bytes.len(), count * 4)));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn save_clip(clip: &Clip, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_clip(BufWriter::new(file), &clip.video).map_err(|e| Error::io(path, e))
}

/// Loads a clip file; the label is not stored in the file.
pub fn load_clip(path: &Path) -> Result<Clip> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let video = read_clip(BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Clip::new(video)
}
