//! Volumetric input representation: signed distance, principal curvatures,
//! local shape diameter and vertex density on a regular grid, plus the
//! occupancy mask.

pub mod channels;
pub mod curvature;
pub mod density;
pub mod grid;
pub mod io;
pub mod lsd;
pub mod sdf;
pub mod splat;
pub mod voxelize;

pub use channels::{
    assemble_channels, featurize, featurize_on, FeatureConfig, FeatureDiagnostics, Features, ShapeChannels,
    CHANNEL_NAMES, NUM_CHANNELS,
};
pub use curvature::{compute_curvatures, Curvature};
pub use density::{compute_vertex_density, vertex_density_with_bandwidth};
pub use grid::{VoxelGrid, GRID_PADDING};
pub use lsd::{compute_local_shape_diameter, ShapeDiameter};
pub use sdf::compute_sdf;
pub use splat::splat_surface_features;
pub use voxelize::{voxelize, CellClass, OccupancyMask, Voxelization};
