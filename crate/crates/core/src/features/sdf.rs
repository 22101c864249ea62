//! Signed distance by fast marching. Surface cells are seeded with the exact
//! point-to-mesh distance at their centre and frozen; the remaining cells are
//! solved with the first-order upwind eikonal update, in increasing order of
//! distance. Negative inside.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::grid::VoxelGrid;
use super::voxelize::{CellClass, Voxelization};
use crate::mesh::Bvh;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Trial {
    value: f64,
    idx: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on value, then on index
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Upwind solution of `|∇u| = 1` given the smallest known neighbour value
/// along each axis.
pub(crate) fn eikonal_update(mut a: [f64; 3], h: f64) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    let mut u = a[0] + h;
    if u > a[1] {
        let d = a[0] - a[1];
        u = 0.5 * (a[0] + a[1] + (2.0 * h * h - d * d).max(0.0).sqrt());
        if u > a[2] {
            let s = a[0] + a[1] + a[2];
            let q = a[0] * a[0] + a[1] * a[1] + a[2] * a[2] - h * h;
            let disc = (s * s - 3.0 * q).max(0.0);
            u = (s + disc.sqrt()) / 3.0;
        }
    }
    u
}

/// Unsigned fast marching from frozen seeds (`Some(value)`).
pub(crate) fn fast_march(grid: &VoxelGrid, seeds: &[Option<f64>]) -> Vec<f64> {
    let n = grid.len();
    let r = grid.res;
    let h = grid.cell_size;
    let mut value = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut heap = BinaryHeap::new();
    for (idx, s) in seeds.iter().enumerate() {
        if let Some(v) = s {
            value[idx] = *v;
            accepted[idx] = true;
        }
    }
    let solve = |idx: usize, value: &[f64], accepted: &[bool]| -> f64 {
        let [i, j, k] = grid.coords(idx);
        let mut a = [f64::INFINITY; 3];
        let c = [i, j, k];
        let stride = [1, r, r * r];
        for axis in 0..3 {
            if c[axis] > 0 && accepted[idx - stride[axis]] {
                a[axis] = a[axis].min(value[idx - stride[axis]]);
            }
            if c[axis] + 1 < r && accepted[idx + stride[axis]] {
                a[axis] = a[axis].min(value[idx + stride[axis]]);
            }
        }
        eikonal_update(a, h)
    };
    for idx in 0..n {
        if accepted[idx] {
            for nb in grid.neighbors6(idx) {
                if !accepted[nb] {
                    let v = solve(nb, &value, &accepted);
                    if v < value[nb] {
                        value[nb] = v;
                        heap.push(Trial { value: v, idx: nb });
                    }
                }
            }
        }
    }
    while let Some(Trial { value: v, idx }) = heap.pop() {
        if accepted[idx] || v > value[idx] {
            continue;
        }
        accepted[idx] = true;
        for nb in grid.neighbors6(idx) {
            if !accepted[nb] {
                let u = solve(nb, &value, &accepted);
                if u < value[nb] {
                    value[nb] = u;
                    heap.push(Trial { value: u, idx: nb });
                }
            }
        }
    }
    value
}

/// Signed distance channel on the voxelization's grid.
pub fn compute_sdf(bvh: &Bvh, vox: &Voxelization) -> Vec<f64> {
    let grid = &vox.grid;
    let seeds: Vec<Option<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            vox.is_surface(idx).then(|| {
                let p = grid.center_of(idx);
                let (d, _, _) = bvh.closest_point(&p);
                if bvh.is_inside(&p) {
                    -d
                } else {
                    d
                }
            })
        })
        .collect();
    let unsigned: Vec<Option<f64>> = seeds.iter().map(|s| s.map(f64::abs)).collect();
    let dist = fast_march(grid, &unsigned);
    dist.iter()
        .zip(&seeds)
        .zip(&vox.classes)
        .map(|((&d, s), class)| match (s, class) {
            (Some(v), _) => *v,
            (None, CellClass::Interior) => -d,
            _ => d,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::voxelize::voxelize;
    use crate::mesh::Point;
    use crate::shapes::icosphere;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eikonal_one_two_three_neighbours() {
        assert_abs_diff_eq!(eikonal_update([0.0, f64::INFINITY, f64::INFINITY], 1.0), 1.0);
        // plane wave along the diagonal of a square
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(eikonal_update([0.0, 0.0, f64::INFINITY], 1.0), s, epsilon = 1e-12);
        assert_abs_diff_eq!(eikonal_update([0.0, 0.0, 0.0], 1.0), 1.0 / 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn marching_from_plane_is_exact() {
        let g = VoxelGrid::new(12, [0.0; 3], 1.0).unwrap();
        let seeds: Vec<Option<f64>> = (0..g.len())
            .map(|idx| (g.coords(idx)[0] == 0).then_some(0.0))
            .collect();
        let d = fast_march(&g, &seeds);
        for idx in 0..g.len() {
            assert_abs_diff_eq!(d[idx], g.coords(idx)[0] as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn sphere_sdf_close_to_analytic() {
        let g = VoxelGrid::new(32, [-0.55; 3], 1.1 / 32.0).unwrap();
        let m = icosphere(Point::origin(), 0.4, 4);
        let bvh = Bvh::build(&m);
        let v = voxelize(&m, &g).unwrap();
        let sdf = compute_sdf(&bvh, &v);
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            let exact = g.center_of(idx).coords.norm() - 0.4;
            worst = worst.max((sdf[idx] - exact).abs());
            if v.is_surface(idx) {
                assert!(sdf[idx].abs() <= 0.5 * 3f64.sqrt() * g.cell_size + 1e-9);
            }
        }
        assert!(worst <= 1.5 * g.cell_size, "max error {worst}");
        // far corner positive
        assert!(sdf[g.len() - 1] > 0.0);
        assert!(sdf[g.index(16, 16, 16)] < 0.0);
    }
}
