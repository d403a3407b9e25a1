//! Run manifests: everything needed to repeat a run.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn version_string() -> String {
    format!("bmlp-{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<InputHash> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub counts: C,
}

impl<C: Serialize> Manifest<C> {
    pub fn write(&self, dir: &Path) -> Result<()> {
        crate::report::write_json(&dir.join(MANIFEST_FILE), self)
    }
}
