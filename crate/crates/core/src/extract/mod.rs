//! From predicted probability volumes to a skeleton tree.

pub mod mst;
pub mod nms;
pub mod symmetry;
pub mod traverse;

use std::path::Path;

use crate::error::{Result, VolrigError};
use crate::features::{FeatureConfig, OccupancyMask, NUM_CHANNELS};
use crate::mesh::{detect_bilateral_symmetry, load_mesh, normalize_mesh, Similarity, TriangleMesh};
use crate::net::{load_model, Granularity, Network};
use crate::skeleton::Skeleton;
use crate::tensor::Tensor;
use crate::train::{cached_features, CachedFeatures};

pub use mst::{build_skeleton, cost_matrix, prim, tree_cost};
pub use nms::{soft_nms, soft_nms_mirrored, Decay, JointCandidate, NmsConfig};
pub use symmetry::{snap_to_plane, symmetrize_map, trilinear};
pub use traverse::{edge_cost, traverse, EXTERIOR_COST};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    pub nms: NmsConfig,
    /// Average the maps with their mirror image when the mesh is symmetric.
    pub symmetrize: bool,
    pub granularity: Granularity,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            nms: NmsConfig::default(),
            symmetrize: true,
            granularity: Granularity::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Skeleton in the frame of the input mesh.
    pub skeleton: Skeleton,
    /// Detected joints in the normalized frame.
    pub joints: Vec<JointCandidate>,
    pub joint_map: Vec<f64>,
    pub bone_map: Vec<f64>,
    pub mask: OccupancyMask,
    pub symmetric: bool,
    /// Maps normalized coordinates back to the input frame via `invert`.
    pub normalization: Similarity,
}

/// Joint and bone maps for already computed features, symmetrized if asked.
pub fn predict_maps(
    net: &Network<f32>,
    features: &CachedFeatures,
    symmetric: bool,
    gamma: Granularity,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = features.grid.res;
    if r != net.config.resolution {
        return Err(VolrigError::Shape(format!(
            "features at {r}³, network expects {}³",
            net.config.resolution
        )));
    }
    let input = Tensor::new(vec![r, r, r, NUM_CHANNELS], features.channels.clone())?;
    let (pj, pb) = net.predict_maps(&input, gamma)?;
    let mut pj: Vec<f64> = pj.into_iter().map(f64::from).collect();
    let mut pb: Vec<f64> = pb.into_iter().map(f64::from).collect();
    if symmetric {
        let plane = crate::mesh::SymmetryPlane::x0();
        pj = symmetrize_map(&pj, &features.grid, &plane);
        pb = symmetrize_map(&pb, &features.grid, &plane);
    }
    Ok((pj, pb))
}

/// Runs detection and tree building on a normalized mesh with its features.
pub fn predict_normalized(
    net: &Network<f32>,
    mesh: &TriangleMesh,
    features: &CachedFeatures,
    cfg: &PredictConfig,
) -> Result<Prediction> {
    cfg.nms.validate()?;
    let symmetric = cfg.symmetrize && detect_bilateral_symmetry(mesh).is_some();
    let (joint_map, bone_map) = predict_maps(net, features, symmetric, cfg.granularity)?;
    let mask = OccupancyMask {
        grid: features.grid,
        data: features.mask.clone(),
    };
    let mut joints = if symmetric {
        soft_nms_mirrored(&joint_map, &mask, &cfg.nms)?
    } else {
        soft_nms(&joint_map, &mask, &cfg.nms)?
    };
    if joints.is_empty() {
        return Err(VolrigError::NoJoints(cfg.nms.threshold));
    }
    if symmetric {
        snap_to_plane(&mut joints, &crate::mesh::SymmetryPlane::x0(), features.grid.cell_size);
    }
    let skeleton = build_skeleton(&joints, &bone_map, &mask)?;
    Ok(Prediction {
        skeleton,
        joints,
        joint_map,
        bone_map,
        mask,
        symmetric,
        normalization: Similarity::identity(),
    })
}

/// Normalizes `mesh`, featurizes it and predicts a skeleton in its own frame.
pub fn predict_mesh(
    net: &Network<f32>,
    features: &FeatureConfig,
    mesh: &TriangleMesh,
    cfg: &PredictConfig,
    cache: Option<&Path>,
) -> Result<Prediction> {
    if features.resolution != net.config.resolution {
        return Err(VolrigError::Config(format!(
            "feature resolution {} does not match the network's {}",
            features.resolution, net.config.resolution
        )));
    }
    let (norm, xf) = normalize_mesh(mesh)?;
    let f = cached_features(&norm, features, cache)?;
    let mut p = predict_normalized(net, &norm, &f, cfg)?;
    p.skeleton = p.skeleton.transformed(&xf.inverse());
    p.normalization = xf;
    Ok(p)
}

/// File-to-skeleton pipeline with a saved model.
pub fn predict_file(mesh_path: &Path, model_path: &Path, cfg: &PredictConfig, cache: Option<&Path>) -> Result<Prediction> {
    let mesh = load_mesh(mesh_path)?;
    let (net, meta) = load_model(model_path)?;
    predict_mesh(&net, &meta.features, &mesh, cfg, cache)
}

/// Grid coordinates of every joint, handy for diagnostics.
pub fn joint_voxels(joints: &[JointCandidate]) -> Vec<[usize; 3]> {
    joints.iter().map(|j| j.voxel).collect()
}

