//! Animation skeleton prediction for 3D character meshes.
//!
//! The pipeline turns a triangle soup into a five-channel volumetric
//! representation, runs a stack of 3D hourglass modules that predict per-voxel
//! joint and bone probabilities, and assembles a skeleton tree from those maps
//! with soft non-maximum suppression and a minimum spanning tree.

pub mod cli;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod mesh;
pub mod net;
pub mod shapes;
pub mod skeleton;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Result, VolrigError};
