//! Binary PPM (P6) and PGM (P5) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Heatmap;
use crate::tensor::Tensor;

use super::Clip;

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("malformed PPM header: bad {what}")))
    }
}

/// Parses a P6 or P5 image with maxval up to 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format("malformed PPM header: expected magic P6 or P5".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("malformed PPM header: empty image {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval} (only 8-bit images)")));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed PPM header: missing whitespace before pixel data".into()));
    }
    let start = cur.pos + 1;
    let len = width * height * channels;
    let pixels = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::Format(format!("truncated PPM: expected {len} pixel bytes, found {}", bytes.len() - start)))?;
    let pixels = if maxval == 255 { pixels.to_vec() } else { pixels.iter().map(|&p| ((p as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8).collect() };
    Ok(Image { width, height, channels, pixels })
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Linear blue (0) to red (1) colormap.
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [(v * 255.0).round() as u8, 0, ((1.0 - v) * 255.0).round() as u8]
}

pub fn save_heatmap_ppm(map: &Heatmap, path: &Path) -> Result<()> {
    let pixels = map.values.iter().flat_map(|&v| colormap(v)).collect();
    write_ppm(&Image { width: map.w, height: map.h, channels: 3, pixels }, path)
}

/// Gray image of a feature plane, min-max scaled (all zero if constant).
pub fn save_feature_pgm(values: &[f32], h: usize, w: usize, path: &Path) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::invalid(format!("feature map of {} values is not {h}x{w}", values.len())));
    }
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    let pixels = values
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
        .collect();
    write_ppm(&Image { width: w, height: h, channels: 1, pixels }, path)
}

/// Stacks the `.ppm` frames of a directory, in file-name order, into a clip.
pub fn load_frames_dir(dir: &Path) -> Result<Clip> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format(format!("{}: no .ppm frames", dir.display())));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let img = read_ppm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        if img.channels != 3 {
            return Err(Error::Format(format!("{}: frames must be P6 colour images", p.display())));
        }
        frames.push(img);
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if let Some((p, f)) = paths.iter().zip(&frames).find(|(_, f)| (f.height, f.width) != (h, w)) {
        return Err(Error::Format(format!(
            "inconsistent frame sizes: {} is {}x{}, first frame is {w}x{h}",
            p.display(),
            f.width,
            f.height
        )));
    }
    let t = frames.len();
    let plane = h * w;
    let mut data = vec![0f32; 3 * t * plane];
    for (f, img) in frames.iter().enumerate() {
        for (i, px) in img.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(c * t + f) * plane + i] = px[c] as f32 / 255.0;
            }
        }
    }
    Clip::new(Tensor::new(vec![3, t, h, w], data)?)
}
