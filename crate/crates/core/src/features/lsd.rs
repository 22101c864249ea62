use rayon::prelude::*;

use super::curvature::tangent_basis;
use crate::mesh::{Bvh, SurfaceSample, Vec3};

pub const LSD_RAYS: usize = 8;
/// Half-angle of the probing cone (a 30° cone).
pub const LSD_HALF_ANGLE_DEG: f64 = 15.0;
pub const LSD_INWARD_OFFSET: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDiameter {
    pub value: f64,
    /// Every ray missed.
    pub missed: bool,
}

/// Axis ray plus `LSD_RAYS - 1` rays evenly spread on the cone around `axis`.
pub fn cone_directions(axis: &Vec3) -> Vec<Vec3> {
    let (t1, t2) = tangent_basis(axis);
    let (s, c) = LSD_HALF_ANGLE_DEG.to_radians().sin_cos();
    let ring = LSD_RAYS - 1;
    let mut dirs = vec![*axis];
    for i in 0..ring {
        let phi = std::f64::consts::TAU * i as f64 / ring as f64;
        dirs.push((axis * c + (t1 * phi.cos() + t2 * phi.sin()) * s).normalize());
    }
    dirs
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median inward ray length from one sample.
pub fn shape_diameter_at(bvh: &Bvh, sample: &SurfaceSample) -> ShapeDiameter {
    let inward = -sample.normal;
    let origin = sample.position + inward * LSD_INWARD_OFFSET;
    let mut hits: Vec<f64> = cone_directions(&inward)
        .iter()
        .filter_map(|d| bvh.intersect(&origin, d).map(|h| h.t))
        .collect();
    if hits.is_empty() {
        return ShapeDiameter {
            value: 0.0,
            missed: true,
        };
    }
    ShapeDiameter {
        value: median(&mut hits),
        missed: false,
    }
}

pub fn compute_local_shape_diameter(bvh: &Bvh, samples: &[SurfaceSample]) -> Vec<ShapeDiameter> {
    samples.par_iter().map(|s| shape_diameter_at(bvh, s)).collect()
}
