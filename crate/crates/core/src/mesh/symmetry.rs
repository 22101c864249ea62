use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use super::{sample_surface, Point, TriangleMesh, Vec3};

pub const SYMMETRY_SAMPLES: usize = 2000;
/// Symmetric Chamfer distance threshold, as a fraction of the longest extent.
pub const SYMMETRY_THRESHOLD: f64 = 0.02;

const SYMMETRY_SEED: u64 = 0x5eed_5e7;

/// Plane `{p : normal · p = offset}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPlane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl SymmetryPlane {
    pub fn x0() -> Self {
        SymmetryPlane {
            normal: [1.0, 0.0, 0.0],
            offset: 0.0,
        }
    }

    pub fn reflect(&self, p: &Point) -> Point {
        let n = Vec3::from(self.normal);
        let d = n.dot(&p.coords) - self.offset;
        p - 2.0 * d * n
    }
}

pub(crate) fn mean_nn_distance(from: &[[f64; 3]], to: &ImmutableKdTree<f64, 3>) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.query(p).nearest_one::<SquaredEuclidean<f64>>().execute().distance.sqrt())
        .sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance between two point sets (mean of both directions).
pub(crate) fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let ta = ImmutableKdTree::new_from_slice(a).expect("nonempty point set");
    let tb = ImmutableKdTree::new_from_slice(b).expect("nonempty point set");
    0.5 * (mean_nn_distance(a, &tb) + mean_nn_distance(b, &ta))
}

/// Tests the plane x = 0 of a normalized, consistently oriented mesh by
/// comparing surface samples with their mirror images.
pub fn detect_bilateral_symmetry(mesh: &TriangleMesh) -> Option<SymmetryPlane> {
    let samples = sample_surface(mesh, SYMMETRY_SAMPLES, SYMMETRY_SEED).ok()?;
    let plane = SymmetryPlane::x0();
    let orig: Vec<[f64; 3]> = samples.iter().map(|s| s.position.coords.into()).collect();
    let mirrored: Vec<[f64; 3]> = samples
        .iter()
        .map(|s| plane.reflect(&s.position).coords.into())
        .collect();
    let extent = mesh.longest_extent();
    let d = chamfer(&orig, &mirrored);
    (d < SYMMETRY_THRESHOLD * extent).then_some(plane)
}
