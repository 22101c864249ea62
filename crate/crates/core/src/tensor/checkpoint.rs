//! Checkpoints: a JSON manifest naming every entry with its shape, kind and
//! byte offset, next to one raw little-endian blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::param::{ParamKind, ParamStore};
use super::{Real, Tensor};
use crate::error::{Result, VolrigError};

pub const CHECKPOINT_FORMAT: &str = "volrig-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dtype: String,
    pub blob: String,
    /// Free-form metadata, e.g. the network configuration.
    pub meta: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
}

/// Blob path belonging to a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, manifest: &Path, meta: serde_json::Value) -> Result<()> {
    let blob = blob_path(manifest);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(store.len());
    for id in store.ids() {
        let v = store.value(id);
        let offset = bytes.len();
        for x in v.data() {
            x.put_le(&mut bytes);
        }
        entries.push(CheckpointEntry {
            name: store.name(id).to_string(),
            kind: store.kind(id),
            shape: v.shape().to_vec(),
            offset,
            bytes: bytes.len() - offset,
        });
    }
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        dtype: T::DTYPE.into(),
        blob: blob
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        meta,
        entries,
    };
    if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    }
    fs::write(&blob, &bytes).map_err(|e| VolrigError::io(&blob, e))?;
    let text = serde_json::to_string_pretty(&ck)? + "\n";
    fs::write(manifest, text).map_err(|e| VolrigError::io(manifest, e))
}

/// Reads the manifest only.
pub fn read_manifest(manifest: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(manifest).map_err(|e| VolrigError::io(manifest, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(VolrigError::Checkpoint(format!("unknown format {}", ck.format)));
    }
    Ok(ck)
}

/// Loads values into an existing store whose names, kinds and shapes must
/// match the checkpoint exactly. Returns the manifest.
pub fn load_checkpoint<T: Real>(store: &mut ParamStore<T>, manifest: &Path) -> Result<Checkpoint> {
    let ck = read_manifest(manifest)?;
    if ck.dtype != T::DTYPE {
        return Err(VolrigError::Checkpoint(format!("dtype {} cannot load into {}", ck.dtype, T::DTYPE)));
    }
    let blob = manifest.with_file_name(&ck.blob);
    let bytes = fs::read(&blob).map_err(|e| VolrigError::io(&blob, e))?;
    if ck.entries.len() != store.len() {
        return Err(VolrigError::Checkpoint(format!(
            "checkpoint has {} entries, network has {}",
            ck.entries.len(),
            store.len()
        )));
    }
    let mut loaded = Vec::with_capacity(ck.entries.len());
    for e in &ck.entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| VolrigError::Checkpoint(format!("unknown entry {}", e.name)))?;
        if store.value(id).shape() != e.shape.as_slice() || store.kind(id) != e.kind {
            return Err(VolrigError::Checkpoint(format!(
                "{}: checkpoint shape {:?}, network shape {:?}",
                e.name,
                e.shape,
                store.value(id).shape()
            )));
        }
        let n: usize = e.shape.iter().product();
        if e.bytes != n * T::BYTES || e.offset + e.bytes > bytes.len() {
            return Err(VolrigError::Checkpoint(format!("{}: blob range out of bounds", e.name)));
        }
        let data = bytes[e.offset..e.offset + e.bytes]
            .chunks_exact(T::BYTES)
            .map(T::get_le)
            .collect();
        loaded.push((id, Tensor::new(e.shape.clone(), data)?));
    }
    for (id, t) in loaded {
        store.set(id, t)?;
    }
    Ok(ck)
}
