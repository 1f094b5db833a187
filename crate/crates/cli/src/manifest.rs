use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST: &str = "run.toml";

/// Written once per output directory of the model stages. Contains nothing
/// time- or host-dependent, so identical reruns produce identical files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub precision: Option<String>,
    /// Input artifact -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Files this command wrote, relative to the output directory.
    pub artifacts: Vec<String>,
    pub config: toml::Table,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path, sha256: &str) {
        self.inputs
            .insert(path.display().to_string(), sha256.to_string());
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, toml::to_string(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(trajgeos::sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifacts_are_sorted_and_unique() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train");
        m.artifacts = vec!["b.tsv".into(), "a.tsv".into(), "b.tsv".into()];
        m.input(Path::new("data/manifest.toml"), "abc");
        let path = m.write(dir.path()).unwrap();
        let back: RunManifest = toml::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.artifacts, ["a.tsv", "b.tsv"]);
        assert_eq!(back.inputs["data/manifest.toml"], "abc");
        assert_eq!(back.tool_version, env!("CARGO_PKG_VERSION"));
    }
}
