//! Run manifests: what a command read, wrote and was configured with.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, VolrigError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<InputFile>,
    pub version: String,
    pub wall_clock_secs: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| VolrigError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    threads: Option<usize>,
    started: Instant,
    inputs: Vec<InputFile>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, threads: Option<usize>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            threads,
            started: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes the manifest to `path` through a temporary file and a rename.
    pub fn finish(self, config: serde_json::Value, outputs: Vec<PathBuf>, path: &Path) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            config,
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            outputs,
        };
        write_atomic(path, (serde_json::to_string_pretty(&m)? + "\n").as_bytes())?;
        Ok(m)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| VolrigError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| VolrigError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| VolrigError::io(path, e))
}
