use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use convivit::{Error, RunConfig};

use crate::Common;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A one-line diagnostic and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Format(_) => EXIT_IO,
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string().replace('\n', " ") }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

pub struct RunSpec {
    pub subcommand: &'static str,
    pub config: RunConfig,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    /// Defaults, then the config file, then `--seed`, then `--set` in order.
    /// With `needs_out`, the output directory is prepared and the resolved
    /// config written to `config.resolved`.
    pub fn resolve(subcommand: &'static str, common: Common, needs_out: bool) -> Result<Self, Failure> {
        let mut config = match &common.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.train.seed = seed;
            config.data.seed = seed;
        }
        for s in &common.overrides {
            config.apply(s)?;
        }
        config.validate()?;
        if needs_out && common.out.is_none() {
            return Err(Failure::config(format!("{subcommand} requires --out DIR")));
        }
        if let Some(out) = &common.out {
            prepare_out(out, common.force)?;
        }
        let spec = RunSpec { subcommand, config, out: common.out };
        if spec.out.is_some() {
            spec.write("config.resolved", spec.config.to_text().as_bytes())?;
        }
        Ok(spec)
    }

    pub fn out_path(&self, name: &str) -> Option<PathBuf> {
        self.out.as_ref().map(|o| o.join(name))
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        match self.out_path(name) {
            Some(path) => fs::write(&path, bytes).map_err(|e| io_failure(&path, e)),
            None => Ok(()),
        }
    }

    /// Append-mode writer for logs that should survive a later failure.
    pub fn log(&self, name: &str) -> Result<Log, Failure> {
        let path = self.out_path(name).ok_or_else(|| Failure::config(format!("{} requires --out DIR", self.subcommand)))?;
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        Ok(Log { path, file })
    }
}

pub struct Log {
    path: PathBuf,
    file: fs::File,
}

impl Log {
    pub fn line(&mut self, line: &str) -> Result<(), Failure> {
        writeln!(self.file, "{line}").and_then(|_| self.file.flush()).map_err(|e| io_failure(&self.path, e))
    }
}

fn prepare_out(out: &Path, force: bool) -> Result<(), Failure> {
    if out.exists() {
        if !out.is_dir() {
            return Err(Failure::config(format!("--out {}: not a directory", out.display())));
        }
        let non_empty = fs::read_dir(out).map_err(|e| io_failure(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Failure::config(format!("--out {}: directory is not empty (pass --force to reuse it)", out.display())));
        }
        Ok(())
    } else {
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))
    }
}
