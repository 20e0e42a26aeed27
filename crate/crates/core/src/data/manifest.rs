//! Dataset manifests: one `path<TAB>label` line per clip. Relative paths are
//! resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: expected `path<TAB>label`", path.display(), i + 1));
        let (p, label) = line.split_once('\t').ok_or_else(bad)?;
        let label = label.trim().parse().map_err(|_| bad())?;
        out.push(ManifestEntry { path: base.join(p), label });
    }
    Ok(out)
}

/// Writes entries with paths relative to the manifest when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        text.push_str(&format!("{}\t{}\n", p.display(), e.label));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
