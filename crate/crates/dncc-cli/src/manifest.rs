//! Run manifests: the fully resolved configuration, a content fingerprint of
//! the dataset, and the artifact paths, written before any work starts. A
//! manifest plus the tool version is enough to reproduce its run.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use dncc::data::Dataset;
use dncc::Result;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Every flag after defaulting, as the command actually used them.
    pub resolved: serde_json::Value,
    pub dataset_fingerprint: String,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, resolved: serde_json::Value, dataset: &Dataset) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            resolved,
            dataset_fingerprint: fingerprint(dataset),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn artifact(&mut self, name: &str, path: &Path) -> &mut Self {
        self.artifacts.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// SHA-256 over a canonical little-endian encoding of the dataset.
pub fn fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.len() as u64).to_le_bytes());
    h.update((ds.num_features() as u64).to_le_bytes());
    h.update((ds.num_classes() as u64).to_le_bytes());
    for v in ds.features() {
        h.update(v.to_le_bytes());
    }
    for &y in ds.labels() {
        h.update((y as u64).to_le_bytes());
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
