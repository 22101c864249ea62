//! On-disk cache of featurized shapes, keyed by a hash of the mesh and the
//! feature settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VolrigError};
use crate::features::{featurize, FeatureConfig, ShapeDiameter, VoxelGrid, NUM_CHANNELS};
use crate::mesh::TriangleMesh;

pub const CACHE_ENV: &str = "VOLRIG_CACHE";
const CACHE_TAG: &str = "volrig-features/1";

/// The parts of a featurization needed for training and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedFeatures {
    pub grid: VoxelGrid,
    pub channels: Vec<f32>,
    pub mask: Vec<bool>,
    pub lsd: Vec<ShapeDiameter>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tag: String,
    grid: VoxelGrid,
    lsd: Vec<f64>,
    lsd_missed: Vec<bool>,
}

/// Content hash of mesh geometry plus feature settings.
pub fn feature_key(mesh: &TriangleMesh, cfg: &FeatureConfig) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_TAG.as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    for v in &mesh.vertices {
        for c in v.coords.iter() {
            h.update(c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        for i in t {
            h.update(i.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Directory named by `VOLRIG_CACHE`, if set and non-empty.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn compute_features(mesh: &TriangleMesh, cfg: &FeatureConfig) -> Result<CachedFeatures> {
    let f = featurize(mesh, cfg)?;
    Ok(CachedFeatures {
        grid: f.channels.grid,
        channels: f.channels.data,
        mask: f.mask.data,
        lsd: f.lsd,
    })
}

fn load(dir: &Path, key: &str, cells: usize) -> Option<CachedFeatures> {
    let header: Header = serde_json::from_slice(&fs::read(dir.join(format!("{key}.json"))).ok()?).ok()?;
    let blob = fs::read(dir.join(format!("{key}.bin"))).ok()?;
    let nch = cells * NUM_CHANNELS;
    if header.tag != CACHE_TAG || header.grid.len() != cells || blob.len() != nch * 4 + cells {
        return None;
    }
    let channels = blob[..nch * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mask = blob[nch * 4..].iter().map(|&b| b != 0).collect();
    let lsd = header
        .lsd
        .iter()
        .zip(&header.lsd_missed)
        .map(|(&value, &missed)| ShapeDiameter { value, missed })
        .collect();
    Some(CachedFeatures {
        grid: header.grid,
        channels,
        mask,
        lsd,
    })
}

fn store(dir: &Path, key: &str, f: &CachedFeatures) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    let mut blob = Vec::with_capacity(f.channels.len() * 4 + f.mask.len());
    for v in &f.channels {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    blob.extend(f.mask.iter().map(|&m| m as u8));
    let header = Header {
        tag: CACHE_TAG.into(),
        grid: f.grid,
        lsd: f.lsd.iter().map(|d| d.value).collect(),
        lsd_missed: f.lsd.iter().map(|d| d.missed).collect(),
    };
    // blob first: a header without its blob is never read back
    let bin = dir.join(format!("{key}.bin"));
    let tmp = dir.join(format!("{key}.bin.tmp"));
    fs::write(&tmp, &blob).map_err(|e| VolrigError::io(&tmp, e))?;
    fs::rename(&tmp, &bin).map_err(|e| VolrigError::io(&bin, e))?;
    let json = dir.join(format!("{key}.json"));
    fs::write(&json, serde_json::to_vec(&header)?).map_err(|e| VolrigError::io(&json, e))
}

/// Features from the cache when present, computed (and stored) otherwise.
pub fn cached_features(mesh: &TriangleMesh, cfg: &FeatureConfig, dir: Option<&Path>) -> Result<CachedFeatures> {
    let Some(dir) = dir else {
        return compute_features(mesh, cfg);
    };
    let key = feature_key(mesh, cfg);
    let cells = cfg.resolution.pow(3);
    if let Some(hit) = load(dir, &key, cells) {
        return Ok(hit);
    }
    let f = compute_features(mesh, cfg)?;
    store(dir, &key, &f)?;
    Ok(f)
}
