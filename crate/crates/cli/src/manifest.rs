//! Run manifests: what a command was given and every file it produced.

use std::path::{Path, PathBuf};

use aligned_core::{CoreError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    /// Verbatim configuration, so a rerun does not depend on the file.
    pub config: serde_json::Value,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub tasks: Vec<String>,
    pub out: PathBuf,
    /// Seconds since the Unix epoch; informational only.
    pub timestamp: u64,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok((bytes.len() as u64, digest.iter().map(|b| format!("{b:02x}")).collect()))
}

/// Describes `paths` (relative to `out`), sorted by path.
pub fn artifacts(out: &Path, paths: &[PathBuf]) -> Result<Vec<Artifact>> {
    let mut list = paths
        .iter()
        .map(|p| {
            let (bytes, sha256) = sha256_file(&out.join(p))?;
            Ok(Artifact {
                path: p.clone(),
                bytes,
                sha256,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    list.sort_by(|a, b| a.path.cmp(&b.path));
    list.dedup_by(|a, b| a.path == b.path);
    Ok(list)
}

/// Every regular file under `dir`, relative to `base`.
pub fn files_under(base: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CoreError::io(&d, e))? {
            let path = entry.map_err(|e| CoreError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(base).expect("walk stays under base").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

impl RunManifest {
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::data(format!("{}: {e}", path.display())))
    }

    /// Paths whose presence or content differs from `other`.
    pub fn differences(&self, other: &RunManifest) -> Vec<PathBuf> {
        let mut diff = Vec::new();
        for a in &self.artifacts {
            match other.artifacts.iter().find(|b| b.path == a.path) {
                Some(b) if b == a => {}
                _ => diff.push(a.path.clone()),
            }
        }
        for b in &other.artifacts {
            if !self.artifacts.iter().any(|a| a.path == b.path) {
                diff.push(b.path.clone());
            }
        }
        diff
    }
}

pub fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}
