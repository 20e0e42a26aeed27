//! Moving-blob clips whose class is the direction of motion.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Clip;

/// Class directions as `(dy, dx)` in image coordinates.
pub const DIRECTIONS: [(&str, f32, f32); 4] = [("up", -1.0, 0.0), ("down", 1.0, 0.0), ("left", 0.0, -1.0), ("right", 0.0, 1.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTaskSpec {
    pub num_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian standard deviation of every blob, in pixels.
    pub radius: f32,
    /// Pixels the target blob moves per frame.
    pub speed: f32,
    pub noise_std: f32,
    /// Static blobs that never move.
    pub distractors: usize,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec { num_classes: 4, frames: 8, height: 64, width: 64, radius: 3.0, speed: 3.0, noise_std: 0.05, distractors: 2 }
    }
}

const BACKGROUND: f32 = 0.1;

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=DIRECTIONS.len()).contains(&self.num_classes) {
            return bad(format!("data.num_classes must be in 2..={}, got {}", DIRECTIONS.len(), self.num_classes));
        }
        if self.frames < 2 {
            return bad(format!("data.frames must be at least 2, got {}", self.frames));
        }
        if !(self.speed >= 1.0) {
            return bad(format!("data.speed must be at least 1 pixel per frame, got {}", self.speed));
        }
        if !(self.radius > 0.0) || !(self.noise_std >= 0.0) {
            return bad("data.radius must be positive and data.noise_std non-negative".into());
        }
        for (name, extent) in [("height", self.height), ("width", self.width)] {
            if (extent as f32) < self.start_margin() * 2.0 + 1.0 {
                return bad(format!(
                    "data.{name} {extent} is too small for a blob of radius {} moving {} px/frame over {} frames",
                    self.radius, self.speed, self.frames
                ));
            }
        }
        Ok(())
    }

    fn travel(&self) -> f32 {
        self.speed * (self.frames - 1) as f32
    }

    /// Distance from the border of the start-position box.
    fn start_margin(&self) -> f32 {
        self.radius + self.travel()
    }

    pub fn class_name(class: usize) -> &'static str {
        DIRECTIONS.get(class).map(|d| d.0).unwrap_or("?")
    }
}

struct Blob {
    y: f32,
    x: f32,
    color: [f32; 3],
}

fn color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)]
}

/// Deterministic clip for `(spec, class, seed)`: a Gaussian blob starting in
/// a class-independent central box and moving in the class direction, over
/// Gaussian noise and static distractor blobs. Values are clamped to [0, 1].
pub fn generate_clip(spec: &SynthTaskSpec, class: usize, seed: u64) -> Result<Clip> {
    spec.validate()?;
    if class >= spec.num_classes {
        return Err(Error::invalid(format!("class {class} out of range for {} classes", spec.num_classes)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, t) = (spec.height, spec.width, spec.frames);
    let m = spec.start_margin();
    let target = Blob { y: rng.gen_range(m..=h as f32 - 1.0 - m), x: rng.gen_range(m..=w as f32 - 1.0 - m), color: color(&mut rng) };
    let distractors: Vec<Blob> = (0..spec.distractors)
        .map(|_| Blob { y: rng.gen_range(0.0..h as f32), x: rng.gen_range(0.0..w as f32), color: color(&mut rng) })
        .collect();
    let noise = Normal::new(0.0f32, spec.noise_std).map_err(|e| Error::Config(format!("data.noise_std: {e}")))?;
    let (_, dy, dx) = DIRECTIONS[class];
    let inv = 1.0 / (2.0 * spec.radius * spec.radius);
    let plane = h * w;
    let mut data = vec![BACKGROUND; 3 * t * plane];
    for f in 0..t {
        let moved = Blob { y: target.y + dy * spec.speed * f as f32, x: target.x + dx * spec.speed * f as f32, color: target.color };
        for blob in distractors.iter().chain(std::iter::once(&moved)) {
            for yy in 0..h {
                let ey = (yy as f32 - blob.y).powi(2);
                for xx in 0..w {
                    let a = (-(ey + (xx as f32 - blob.x).powi(2)) * inv).exp();
                    if a < 1e-6 {
                        continue;
                    }
                    for c in 0..3 {
                        data[(c * t + f) * plane + yy * w + xx] += a * blob.color[c];
                    }
                }
            }
        }
    }
    if spec.noise_std > 0.0 {
        for v in &mut data {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Clip { video: Tensor::new(vec![3, t, h, w], data)?, label: Some(class), seed: Some(seed) })
}

/// `n` clips with per-class counts differing by at most one, in an order
/// and with per-clip seeds drawn from `master_seed`.
pub fn generate_dataset(spec: &SynthTaskSpec, n: usize, master_seed: u64) -> Result<Vec<Clip>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);
    let seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    labels.iter().zip(seeds).map(|(&label, seed)| generate_clip(spec, label, seed)).collect()
}

/// Intensity-weighted centroid `(row, col)` of one frame, after removing
/// the background level.
pub fn centroid(clip: &Clip, frame: usize) -> (f32, f32) {
    let s = clip.video.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    let (mut m, mut my, mut mx) = (0f64, 0f64, 0f64);
    for c in 0..3 {
        let base = (c * t + frame) * h * w;
        for y in 0..h {
            for x in 0..w {
                let v = (clip.video.data()[base + y * w + x] - BACKGROUND).max(0.0) as f64;
                m += v;
                my += v * y as f64;
                mx += v * x as f64;
            }
        }
    }
    ((my / m) as f32, (mx / m) as f32)
}
