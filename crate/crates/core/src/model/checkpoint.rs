//! Parameter checkpoints: magic `CVVTW`, u32 version, length-prefixed config
//! text, then `(name, rank, extents, f32 data)` records until end of file.
//! All integers are little-endian u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{read_exact_or, read_u32, write_u32};
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::{ConViViT, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CVVTW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut out: W, config: &ModelConfig, store: &ParamStore) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut out, CHECKPOINT_VERSION)?;
    let text = config.to_text();
    write_u32(&mut out, text.len() as u32)?;
    out.write_all(text.as_bytes())?;
    for entry in store.entries() {
        write_u32(&mut out, entry.name.len() as u32)?;
        out.write_all(entry.name.as_bytes())?;
        write_u32(&mut out, entry.value.rank() as u32)?;
        for &e in entry.value.shape() {
            write_u32(&mut out, e as u32)?;
        }
        let mut bytes = Vec::with_capacity(entry.value.numel() * 4);
        for v in entry.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
    }
    out.flush()
}

/// Parses a checkpoint stream into its config and named tensors.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ModelConfig, Vec<(String, Tensor)>)> {
    let mut magic = [0u8; 5];
    read_exact_or(&mut input, &mut magic, "checkpoint magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected \"CVVTW\"")));
    }
    let version = read_u32(&mut input, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")));
    }
    let len = read_u32(&mut input, "config length")? as usize;
    let mut text = vec![0u8; len];
    read_exact_or(&mut input, &mut text, "config text")?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let config = ModelConfig::from_text(&text)?;
    let mut tensors = Vec::new();
    loop {
        let mut first = [0u8; 4];
        let got = read_up_to(&mut input, &mut first)?;
        if got == 0 {
            break;
        }
        if got < 4 {
            return Err(Error::Format("truncated checkpoint: missing parameter name length".into()));
        }
        let name_len = u32::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(&mut input, &mut name, "parameter name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut input, "parameter rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("parameter {name}: rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut input, "parameter extents")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&c| c.checked_mul(4).is_some())
            .ok_or_else(|| Error::Format(format!("parameter {name}: extents {shape:?} overflow")))?;
        let mut bytes = vec![0u8; count * 4];
        read_exact_or(&mut input, &mut bytes, &format!("data of parameter {name}"))?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push((name.clone(), Tensor::new(shape, data).map_err(|e| Error::Format(format!("parameter {name}: {e}")))?));
    }
    Ok((config, tensors))
}

fn read_up_to<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Format(format!("checkpoint read failed: {e}"))),
        }
    }
    Ok(got)
}

pub fn save_checkpoint(path: &Path, model: &ConViViT, store: &ParamStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), &model.config, store).map_err(|e| Error::io(path, e))
}

/// Rebuilds the architecture from the stored config and fills in every
/// parameter by name; missing, unknown or mis-shaped tensors are errors.
pub fn load_checkpoint(path: &Path) -> Result<(ConViViT, ParamStore)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (config, tensors) = read_checkpoint(BufReader::new(file))?;
    let (model, mut store) = ConViViT::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut seen = vec![false; store.len()];
    for (name, tensor) in tensors {
        let id = store.find(&name).ok_or_else(|| Error::Format(format!("checkpoint has unknown parameter {name}")))?;
        store.set(id, tensor)?;
        seen[id.index()] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(Error::Format(format!("checkpoint is missing parameter {}", store.entries()[i].name)));
    }
    Ok((model, store))
}
