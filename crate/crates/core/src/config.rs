//! Flat `section.key=value` run configuration covering the model, the
//! training loop and the dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{generate_dataset, load_clip, read_manifest, Clip, SynthTaskSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub synth: SynthTaskSpec,
    pub train_size: usize,
    pub test_size: usize,
    /// Master seed of the synthetic training set; the test set uses `seed + 1`.
    pub seed: u64,
    /// Clip manifests replacing the synthetic task when set.
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { synth: SynthTaskSpec::default(), train_size: 400, test_size: 100, seed: 0, train_manifest: None, test_manifest: None }
    }
}

const DATA_KEYS: [&str; 13] = [
    "num_classes",
    "frames",
    "height",
    "width",
    "radius",
    "speed",
    "noise_std",
    "distractors",
    "train_size",
    "test_size",
    "seed",
    "train_manifest",
    "test_manifest",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("data.{key}: cannot parse {value:?}")))
}

impl DataConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        let path = |v: &str| if v.trim() == "none" { None } else { Some(PathBuf::from(v.trim())) };
        match key {
            "num_classes" => s.num_classes = parse(key, value)?,
            "frames" => s.frames = parse(key, value)?,
            "height" => s.height = parse(key, value)?,
            "width" => s.width = parse(key, value)?,
            "radius" => s.radius = parse(key, value)?,
            "speed" => s.speed = parse(key, value)?,
            "noise_std" => s.noise_std = parse(key, value)?,
            "distractors" => s.distractors = parse(key, value)?,
            "train_size" => self.train_size = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_manifest" => self.train_manifest = path(value),
            "test_manifest" => self.test_manifest = path(value),
            _ => return Err(Error::Config(format!("unknown key data.{key}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.synth;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        Some(match key {
            "num_classes" => s.num_classes.to_string(),
            "frames" => s.frames.to_string(),
            "height" => s.height.to_string(),
            "width" => s.width.to_string(),
            "radius" => s.radius.to_string(),
            "speed" => s.speed.to_string(),
            "noise_std" => s.noise_std.to_string(),
            "distractors" => s.distractors.to_string(),
            "train_size" => self.train_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "seed" => self.seed.to_string(),
            "train_manifest" => path(&self.train_manifest),
            "test_manifest" => path(&self.test_manifest),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Applies `section.key=value`; unknown sections and keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key.split_once('.') {
            Some(("model", k)) => self.model.set(k, value),
            Some(("train", k)) => self.train.set(k, value),
            Some(("data", k)) => self.data.set(k, value),
            _ => Err(Error::Config(format!("unknown key {key} (expected model.*, train.* or data.*)"))),
        }
    }

    /// Parses one `key=value` assignment, as given to `--set`.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Applies the lines of a config file; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply(line).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.train_manifest.is_none() {
            self.data.synth.validate()?;
            if self.data.synth.num_classes != self.model.num_classes {
                return Err(Error::Config(format!(
                    "data.num_classes {} differs from model.num_classes {}",
                    self.data.synth.num_classes, self.model.num_classes
                )));
            }
            let s = &self.data.synth;
            self.model.token_grid(s.frames, s.height, s.width).map_err(|e| Error::Config(format!("data extents: {e}")))?;
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in crate::model::config_keys() {
            writeln!(s, "model.{k}={}", self.model.get(k).unwrap()).unwrap();
        }
        for k in crate::train::config_keys() {
            if let Some(v) = self.train.get(k) {
                writeln!(s, "train.{k}={v}").unwrap();
            }
        }
        for k in DATA_KEYS {
            writeln!(s, "data.{k}={}", self.data.get(k).unwrap()).unwrap();
        }
        s
    }

    /// Train and test sets: from manifests if configured, else synthetic.
    pub fn datasets(&self) -> Result<(Vec<Clip>, Vec<Clip>)> {
        match &self.data.train_manifest {
            Some(train) => {
                let test = self
                    .data
                    .test_manifest
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.train_manifest requires data.test_manifest".into()))?;
                Ok((load_manifest_clips(train)?, load_manifest_clips(test)?))
            }
            None => {
                let d = &self.data;
                Ok((generate_dataset(&d.synth, d.train_size, d.seed)?, generate_dataset(&d.synth, d.test_size, d.seed.wrapping_add(1))?))
            }
        }
    }
}

pub fn load_manifest_clips(path: &Path) -> Result<Vec<Clip>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let mut c = load_clip(&e.path)?;
            c.label = Some(e.label);
            Ok(c)
        })
        .collect()
}
