//! Content-addressed stage outputs.
//!
//! A stage's file name carries the first 16 hex digits of a SHA-256 over the
//! stage name and everything its output depends on, so changing any input
//! selects a fresh file and an unchanged stage is loaded instead of rerun.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{PipelineError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::file(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of an ordered id list.
pub fn ids_digest<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFile {
    pub stage: String,
    pub key: String,
    pub path: PathBuf,
}

impl StageFile {
    pub fn new(dir: &Path, stage: &str, inputs: &impl Serialize) -> Self {
        let json = serde_json::to_vec(&(stage, inputs)).expect("stage inputs serialize");
        let key = sha256_hex(&json)[..16].to_string();
        StageFile {
            stage: stage.to_string(),
            path: dir.join(format!("{stage}-{key}.jsonl")),
            key,
        }
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    pub fn file_name(&self) -> String {
        self.path.file_name().unwrap().to_string_lossy().into_owned()
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::file(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::file(path, e))
}

/// Runs `write` against a temporary path and renames the result into place.
pub fn produce(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::file(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::file(path, e))
}
