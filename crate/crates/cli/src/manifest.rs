//! `manifest.json`: every artifact written into an output directory with
//! its SHA-256, grouped by the command that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    /// Seeds and other run parameters, as given by the pipeline.
    pub parameters: serde_json::Value,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: BTreeMap<String, RunEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    /// Records (or replaces) the entry of `command`, hashing `files` (paths
    /// relative to `dir`).
    pub fn record(
        &mut self,
        dir: &Path,
        command: &str,
        parameters: serde_json::Value,
        files: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let full = dir.join(f);
            entries.push(FileEntry {
                path: f.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(&full)?,
                bytes: std::fs::metadata(&full)?.len(),
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        self.runs.insert(command.to_string(), RunEntry { parameters, files: entries });
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    /// All `(path, sha256)` pairs across runs.
    pub fn hashes(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> =
            self.runs.values().flat_map(|r| r.files.iter().map(|f| (f.path.clone(), f.sha256.clone()))).collect();
        out.sort();
        out
    }
}
