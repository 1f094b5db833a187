//! Checkpoint files: a binary blob of little-endian tensors plus a TOML
//! manifest describing names, shapes, offsets and a SHA-256 of the blob.
//!
//! A checkpoint at stem `dir/model` is the pair `dir/model.bin` and
//! `dir/model.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ParamStore, Real, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TGCK";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("checkpoint blob {path} is corrupted: {msg}")]
    Corrupted { path: PathBuf, msg: String },
    #[error("checkpoint stores {found} values but this model uses {expected}")]
    Dtype { expected: String, found: String },
    #[error(
        "checkpoint does not match the model: missing tensors [{}], unexpected tensors [{}]",
        missing.join(", "),
        unexpected.join(", ")
    )]
    Registry {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("tensor {name}: checkpoint shape {found:?} but model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Everything recorded next to the tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub dataset_hash: String,
    /// Completed training epochs.
    pub epoch: u64,
    /// Optimizer step counter, when optimizer state is included.
    pub optimizer_step: u64,
    /// Free-form structured settings (the model and training config).
    pub config: toml::Table,
    /// Training bookkeeping needed to resume.
    #[serde(default)]
    pub state: toml::Table,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    blob_sha256: String,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("toml"))
}

pub fn save_checkpoint<T: Real>(
    stem: &Path,
    meta: &CheckpointMeta,
    tensors: &[(String, &Tensor<T>)],
) -> Result<(), CheckpointError> {
    let (bin_path, toml_path) = paths(stem);
    let mut blob = Vec::new();
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for &x in t.data() {
            x.write_le(&mut blob);
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        meta: meta.clone(),
        tensors: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| CheckpointError::Manifest {
        path: toml_path.clone(),
        msg: e.to_string(),
    })?;
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(&bin_path, &blob).map_err(|source| CheckpointError::Io {
        path: bin_path.clone(),
        source,
    })?;
    fs::write(&toml_path, text).map_err(|source| CheckpointError::Io {
        path: toml_path,
        source,
    })
}

pub fn load_checkpoint<T: Real>(stem: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let (bin_path, toml_path) = paths(stem);
    let text = fs::read_to_string(&toml_path).map_err(|source| CheckpointError::Io {
        path: toml_path.clone(),
        source,
    })?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| CheckpointError::Manifest {
        path: toml_path.clone(),
        msg: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Manifest {
            path: toml_path,
            msg: format!("unsupported format version {}", manifest.format_version),
        });
    }
    if manifest.dtype != T::DTYPE {
        return Err(CheckpointError::Dtype {
            expected: T::DTYPE.into(),
            found: manifest.dtype,
        });
    }
    let blob = fs::read(&bin_path).map_err(|source| CheckpointError::Io {
        path: bin_path.clone(),
        source,
    })?;
    let corrupted = |msg: String| CheckpointError::Corrupted {
        path: bin_path.clone(),
        msg,
    };
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(corrupted("checksum mismatch".into()));
    }
    if blob.len() < 8 || &blob[..4] != MAGIC {
        return Err(corrupted("bad magic".into()));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * T::BYTES;
        if end > blob.len() {
            return Err(corrupted(format!(
                "tensor {} runs past end of blob",
                entry.name
            )));
        }
        let data = blob[entry.offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        let t = Tensor::new(entry.shape, data).map_err(|e| corrupted(e.to_string()))?;
        tensors.push((entry.name, t));
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        tensors,
    })
}

impl<T: Real> Checkpoint<T> {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies parameter values into `store`. Names must match exactly in both
    /// directions (ignoring tensors under `prefix_ignored`, e.g. optimizer
    /// moments) and shapes must agree.
    pub fn apply_to(
        &self,
        store: &mut ParamStore<T>,
        prefix_ignored: &str,
    ) -> Result<(), CheckpointError> {
        let model: Vec<String> = store.names().map(str::to_string).collect();
        let stored: Vec<&str> = self
            .tensors
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| prefix_ignored.is_empty() || !n.starts_with(prefix_ignored))
            .collect();
        let missing: Vec<String> = model
            .iter()
            .filter(|n| !stored.contains(&n.as_str()))
            .cloned()
            .collect();
        let unexpected: Vec<String> = stored
            .iter()
            .filter(|n| !model.iter().any(|m| m == *n))
            .map(|n| n.to_string())
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(CheckpointError::Registry {
                missing,
                unexpected,
            });
        }
        for name in &model {
            let id = store.id(name).expect("registered");
            let t = self.tensor(name).expect("checked above");
            if t.shape() != store.value(id).shape() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: store.value(id).shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        for name in &model {
            let id = store.id(name).expect("registered");
            *store.value_mut(id) = self.tensor(name).expect("checked above").clone();
        }
        Ok(())
    }
}
