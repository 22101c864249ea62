use serde::{Deserialize, Serialize};

use super::curvature::compute_curvatures;
use super::density::compute_vertex_density;
use super::grid::VoxelGrid;
use super::lsd::{compute_local_shape_diameter, ShapeDiameter};
use super::sdf::compute_sdf;
use super::splat::splat_surface_features;
use super::voxelize::{voxelize, OccupancyMask, Voxelization};
use crate::error::{Result, VolrigError};
use crate::mesh::{sample_surface, Bvh, Point, SurfaceSample, TriangleMesh};

pub const NUM_CHANNELS: usize = 5;
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["sdf", "k1", "k2", "lsd", "lvd"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub resolution: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            resolution: 88,
            samples: 10_000,
            seed: 0,
        }
    }
}

/// The five-channel input volume, `res³ × 5`, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeChannels {
    pub grid: VoxelGrid,
    pub data: Vec<f32>,
}

impl ShapeChannels {
    pub fn get(&self, idx: usize, channel: usize) -> f32 {
        self.data[idx * NUM_CHANNELS + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f32> {
        self.data.iter().skip(channel).step_by(NUM_CHANNELS).copied().collect()
    }

    pub fn shape(&self) -> [usize; 4] {
        let r = self.grid.res;
        [r, r, r, NUM_CHANNELS]
    }
}

/// Interleaves the channels. `surface` holds `[k1, k2, lsd]` per cell.
pub fn assemble_channels(
    vox: &Voxelization,
    sdf: &[f64],
    surface: &[[f64; 3]],
    lvd: &[f64],
) -> Result<ShapeChannels> {
    let n = vox.grid.len();
    if sdf.len() != n || surface.len() != n || lvd.len() != n {
        return Err(VolrigError::Shape(format!(
            "channel lengths {}/{}/{} do not match grid of {n} cells",
            sdf.len(),
            surface.len(),
            lvd.len()
        )));
    }
    if vox.surface_count() == 0 {
        return Err(VolrigError::DegenerateMesh("no surface voxels".into()));
    }
    let mut data = Vec::with_capacity(n * NUM_CHANNELS);
    for idx in 0..n {
        let s = if vox.is_surface(idx) { surface[idx] } else { [0.0; 3] };
        data.extend([sdf[idx], s[0], s[1], s[2], lvd[idx]].map(|v| v as f32));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(VolrigError::NonFinite("input channels".into()));
    }
    Ok(ShapeChannels {
        grid: vox.grid,
        data,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub degenerate_curvature: usize,
    pub lsd_missed: usize,
}

#[derive(Debug, Clone)]
pub struct Features {
    pub channels: ShapeChannels,
    pub mask: OccupancyMask,
    pub voxels: Voxelization,
    pub samples: Vec<SurfaceSample>,
    pub lsd: Vec<ShapeDiameter>,
    pub diagnostics: FeatureDiagnostics,
}

/// Full featurization of a (normalized) mesh on its enclosing grid.
pub fn featurize(mesh: &TriangleMesh, cfg: &FeatureConfig) -> Result<Features> {
    let grid = VoxelGrid::enclosing(&mesh.bounds(), cfg.resolution)?;
    featurize_on(mesh, &grid, cfg)
}

pub fn featurize_on(mesh: &TriangleMesh, grid: &VoxelGrid, cfg: &FeatureConfig) -> Result<Features> {
    let voxels = voxelize(mesh, grid)?;
    let bvh = Bvh::build(mesh);
    let sdf = compute_sdf(&bvh, &voxels);
    let samples = sample_surface(mesh, cfg.samples, cfg.seed)?;
    let curv = compute_curvatures(&samples);
    let lsd = compute_local_shape_diameter(&bvh, &samples);
    let positions: Vec<Point> = samples.iter().map(|s| s.position).collect();
    let values: Vec<[f64; 3]> = curv.iter().zip(&lsd).map(|(c, l)| [c.k1, c.k2, l.value]).collect();
    let surface = splat_surface_features(&voxels, &positions, &values);
    let lvd = compute_vertex_density(mesh, grid);
    let channels = assemble_channels(&voxels, &sdf, &surface, &lvd)?;
    let diagnostics = FeatureDiagnostics {
        degenerate_curvature: curv.iter().filter(|c| c.degenerate).count(),
        lsd_missed: lsd.iter().filter(|l| l.missed).count(),
    };
    Ok(Features {
        channels,
        mask: voxels.mask(),
        voxels,
        samples,
        lsd,
        diagnostics,
    })
}
