//! Target probability volumes: Gaussian blobs at joints and along bones,
//! merged by voxelwise maximum.

use crate::error::{Result, VolrigError};
use crate::features::VoxelGrid;
use crate::mesh::Vec3;
use crate::skeleton::Skeleton;

/// Kernel support in standard deviations.
pub const TARGET_TRUNCATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub joints: Vec<f32>,
    pub bones: Vec<f32>,
}

/// `max(map, exp(-d²/2σ²))` around a point in grid coordinates.
pub fn splat_gaussian(map: &mut [f32], grid: &VoxelGrid, c: &Vec3, sigma: f64) {
    let reach = TARGET_TRUNCATION * sigma;
    let r = grid.res as i64;
    let lo = |v: f64| ((v - reach).ceil() as i64).clamp(0, r - 1);
    let hi = |v: f64| ((v + reach).floor() as i64).clamp(0, r - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for k in lo(c.z)..=hi(c.z) {
        for j in lo(c.y)..=hi(c.y) {
            for i in lo(c.x)..=hi(c.x) {
                let d2 = (i as f64 - c.x).powi(2) + (j as f64 - c.y).powi(2) + (k as f64 - c.z).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let v = (-d2 * inv).exp() as f32;
                let slot = &mut map[grid.index(i as usize, j as usize, k as usize)];
                if v > *slot {
                    *slot = v;
                }
            }
        }
    }
}

/// Builds `P̂_j` and `P̂_b` on `grid`. `sigma` and `spacing` are in voxels.
pub fn make_target_maps(skeleton: &Skeleton, grid: &VoxelGrid, sigma: f64, spacing: f64) -> Result<TargetMaps> {
    if !(sigma > 0.0 && spacing > 0.0) {
        return Err(VolrigError::Config("target sigma and bone spacing must be positive".into()));
    }
    if let Some(j) = skeleton.joints.iter().find(|j| !grid.contains(&j.position)) {
        return Err(VolrigError::Invalid(format!("joint {} lies outside the grid", j.name)));
    }
    let n = grid.len();
    let mut joints = vec![0.0f32; n];
    let mut bones = vec![0.0f32; n];
    for j in &skeleton.joints {
        splat_gaussian(&mut joints, grid, &grid.to_grid(&j.position), sigma);
    }
    for (a, b) in skeleton.segments() {
        let (mut ga, mut gb) = (grid.to_grid(&a), grid.to_grid(&b));
        // sample from the lexicographically smaller end so either orientation
        // gives the same bits
        if gb.as_slice() < ga.as_slice() {
            std::mem::swap(&mut ga, &mut gb);
        }
        let steps = ((gb - ga).norm() / spacing).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            splat_gaussian(&mut bones, grid, &(ga + (gb - ga) * t), sigma);
        }
    }
    Ok(TargetMaps { joints, bones })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point;
    use crate::skeleton::Joint;

    fn grid() -> VoxelGrid {
        VoxelGrid::new(24, [0.0; 3], 1.0).unwrap()
    }

    fn skel(points: &[[f64; 3]]) -> Skeleton {
        let joints = points
            .iter()
            .enumerate()
            .map(|(i, p)| Joint {
                name: format!("j{i}"),
                position: Point::new(p[0], p[1], p[2]),
            })
            .collect();
        let edges = (1..points.len()).map(|i| (i - 1, i)).collect();
        Skeleton::new(joints, edges, 0).unwrap()
    }

    #[test]
    fn joint_at_cell_center() {
        let g = grid();
        let t = make_target_maps(&skel(&[[5.5, 5.5, 5.5], [15.5, 5.5, 5.5]]), &g, 1.0, 0.5).unwrap();
        assert_eq!(t.joints[g.index(5, 5, 5)], 1.0);
        assert_eq!(t.joints[g.index(15, 5, 5)], 1.0);
        assert!((t.joints[g.index(6, 5, 5)] as f64 - (-0.5f64).exp()).abs() < 1e-6);
        // four sigma away is still inside the support, five is not
        assert!(t.joints[g.index(9, 5, 5)] > 0.0);
        assert_eq!(t.joints[g.index(5, 11, 5)], 0.0);
    }

    #[test]
    fn bone_band_has_no_gaps() {
        let g = grid();
        let t = make_target_maps(&skel(&[[3.5, 8.5, 8.5], [17.2, 8.5, 8.5]]), &g, 1.0, 0.5).unwrap();
        for i in 3..=17 {
            assert!(t.bones[g.index(i, 8, 8)] >= 0.88, "cell {i}");
        }
    }

    #[test]
    fn order_does_not_matter_and_outside_rejected() {
        let g = grid();
        let a = make_target_maps(&skel(&[[3.0, 4.0, 5.0], [9.0, 9.0, 9.0], [12.0, 3.0, 7.0]]), &g, 1.0, 0.5).unwrap();
        let b = make_target_maps(&skel(&[[12.0, 3.0, 7.0], [9.0, 9.0, 9.0], [3.0, 4.0, 5.0]]), &g, 1.0, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(make_target_maps(&skel(&[[3.0, 4.0, 5.0], [30.0, 1.0, 1.0]]), &g, 1.0, 0.5).is_err());
    }
}
