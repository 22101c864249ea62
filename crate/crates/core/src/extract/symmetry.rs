//! Averaging a probability volume with its mirror image.

use super::nms::JointCandidate;
use crate::features::VoxelGrid;
use crate::mesh::{SymmetryPlane, Vec3};

/// Trilinear sample at continuous grid coordinates (cell centres are
/// integers). Outside the grid the nearest edge cell is used.
pub fn trilinear(map: &[f64], grid: &VoxelGrid, g: &Vec3) -> f64 {
    let top = (grid.res - 1) as f64;
    let c = [g.x.clamp(0.0, top), g.y.clamp(0.0, top), g.z.clamp(0.0, top)];
    let i0 = c.map(|v| (v.floor() as usize).min(grid.res - 1));
    let i1 = i0.map(|v| (v + 1).min(grid.res - 1));
    let f = [c[0] - i0[0] as f64, c[1] - i0[1] as f64, c[2] - i0[2] as f64];
    let mut acc = 0.0;
    for corner in 0..8 {
        let pick = |a: usize| corner >> a & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if pick(a) {
                w *= f[a];
                idx[a] = i1[a];
            } else {
                w *= 1.0 - f[a];
                idx[a] = i0[a];
            }
        }
        if w != 0.0 {
            acc += w * map[grid.index(idx[0], idx[1], idx[2])];
        }
    }
    acc
}

/// `P'(v) = (P(v) + P(reflect(v))) / 2`.
pub fn symmetrize_map(map: &[f64], grid: &VoxelGrid, plane: &SymmetryPlane) -> Vec<f64> {
    (0..grid.len())
        .map(|idx| {
            let r = plane.reflect(&grid.center_of(idx));
            0.5 * (map[idx] + trilinear(map, grid, &grid.to_grid(&r)))
        })
        .collect()
}

/// Projects joints closer than one cell to the plane onto it. On an even
/// grid the plane runs between two cell layers, so a midline peak would
/// otherwise sit half a cell to one side.
pub fn snap_to_plane(joints: &mut [JointCandidate], plane: &SymmetryPlane, cell: f64) {
    let n = Vec3::from(plane.normal);
    for j in joints {
        let d = n.dot(&j.position.coords) - plane.offset;
        if d.abs() < cell {
            j.position -= d * n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point;

    // x-centred grid so mirrored cell centres coincide
    fn grid() -> VoxelGrid {
        VoxelGrid::new(12, [-6.0, 0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn trilinear_hits_cell_values_and_midpoints() {
        let g = grid();
        let map: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
        assert_eq!(trilinear(&map, &g, &Vec3::new(3.0, 4.0, 5.0)), map[g.index(3, 4, 5)]);
        let mid = trilinear(&map, &g, &Vec3::new(3.5, 4.0, 5.0));
        assert!((mid - 0.5 * (map[g.index(3, 4, 5)] + map[g.index(4, 4, 5)])).abs() < 1e-12);
    }

    #[test]
    fn peak_splits_and_symmetric_map_is_fixed() {
        let g = grid();
        let mut map = vec![0.0; g.len()];
        map[g.index(9, 3, 3)] = 1.0;
        let s = symmetrize_map(&map, &g, &SymmetryPlane::x0());
        assert!((s[g.index(9, 3, 3)] - 0.5).abs() < 1e-12);
        assert!((s[g.index(2, 3, 3)] - 0.5).abs() < 1e-12);
        let again = symmetrize_map(&s, &g, &SymmetryPlane::x0());
        for (a, b) in s.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn midline_joints_snap_and_others_stay() {
        let joint = |x: f64| JointCandidate {
            voxel: [0; 3],
            position: Point::new(x, 1.0, 2.0),
            probability: 0.5,
        };
        let mut js = vec![joint(-0.05), joint(0.3), joint(-0.099)];
        snap_to_plane(&mut js, &SymmetryPlane::x0(), 0.1);
        assert_eq!(js[0].position, Point::new(0.0, 1.0, 2.0));
        assert_eq!(js[1].position.x, 0.3);
        assert_eq!(js[2].position.x, 0.0);
    }
}
