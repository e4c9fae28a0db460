//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub subcommand: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: C,
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: BTreeMap<&'static str, String>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(subcommand: &'static str, seed: Option<u64>, config: C) -> Self {
        Self {
            subcommand,
            version: VERSION,
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, key: &'static str, path: &Path) -> Self {
        self.inputs.insert(key, path.display().to_string());
        self
    }

    pub fn output(mut self, key: &'static str, path: &Path) -> Self {
        self.outputs.insert(key, path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `dir/manifest.json` for a directory output, otherwise the output path
/// with its extension replaced by `manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        output.with_extension("manifest.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("out/ckpt.json")),
            Path::new("out/ckpt.manifest.json")
        );
        assert_eq!(
            manifest_path(Path::new("res.txt")),
            Path::new("res.manifest.json")
        );
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(manifest_path(dir.path()), dir.path().join("manifest.json"));
    }
}
