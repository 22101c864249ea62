//! Trained networks on disk: a checkpoint whose metadata records the
//! network and featurization settings it was trained with.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkConfig};
use crate::error::{Result, VolrigError};
use crate::features::FeatureConfig;
use crate::tensor::{load_checkpoint, save_checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub network: NetworkConfig,
    pub features: FeatureConfig,
    /// Training settings, kept for reference only.
    #[serde(default)]
    pub train: serde_json::Value,
}

pub fn save_model(net: &Network<f32>, features: &FeatureConfig, train: serde_json::Value, path: &Path) -> Result<()> {
    let meta = ModelMeta {
        network: net.config.clone(),
        features: *features,
        train,
    };
    save_checkpoint(&net.params, path, serde_json::to_value(&meta)?)
}

/// Rebuilds the network described by the checkpoint and loads its values.
pub fn load_model(path: &Path) -> Result<(Network<f32>, ModelMeta)> {
    let manifest = crate::tensor::checkpoint::read_manifest(path)?;
    let meta: ModelMeta = serde_json::from_value(manifest.meta)
        .map_err(|e| VolrigError::Checkpoint(format!("metadata is not a model description: {e}")))?;
    if meta.features.resolution != meta.network.resolution {
        return Err(VolrigError::Checkpoint("feature and network resolutions differ".into()));
    }
    let mut net = Network::build(meta.network.clone(), 0)?;
    load_checkpoint(&mut net.params, path)?;
    Ok((net, meta))
}
