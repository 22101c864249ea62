use rayon::prelude::*;

use super::grid::VoxelGrid;
use crate::mesh::{average_edge_length, TriangleMesh};

/// Kernel bandwidth in multiples of the average edge length.
pub const LVD_BANDWIDTH_EDGES: f64 = 10.0;
/// Kernel support radius in multiples of the bandwidth.
pub const LVD_TRUNCATION: f64 = 3.0;

/// Per-axis kernel weights of one vertex over the cells it can reach.
struct AxisWeights {
    lo: [usize; 3],
    w: [Vec<f64>; 3],
    /// squared offsets in units of h², used for the ball test
    d2: [Vec<f64>; 3],
}

/// Unnormalized Gaussian KDE of vertex positions sampled at every cell centre,
/// bandwidth `h`, truncated to a ball of radius `LVD_TRUNCATION * h`.
pub fn vertex_density_with_bandwidth(mesh: &TriangleMesh, grid: &VoxelGrid, h: f64) -> Vec<f64> {
    let r = grid.res;
    let support = LVD_TRUNCATION * h;
    let inv = 1.0 / (2.0 * h * h);
    let lim2 = LVD_TRUNCATION * LVD_TRUNCATION;
    let weights: Vec<Option<AxisWeights>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let mut lo = [0usize; 3];
            let mut w: [Vec<f64>; 3] = Default::default();
            let mut d2: [Vec<f64>; 3] = Default::default();
            for a in 0..3 {
                let g = (v[a] - grid.origin[a]) / grid.cell_size - 0.5;
                let rad = support / grid.cell_size;
                let first = (g - rad).ceil().max(0.0);
                let last = (g + rad).floor().min((r - 1) as f64);
                if first > last {
                    return None;
                }
                lo[a] = first as usize;
                for c in lo[a]..=last as usize {
                    let d = grid.origin[a] + (c as f64 + 0.5) * grid.cell_size - v[a];
                    w[a].push((-d * d * inv).exp());
                    d2[a].push(d * d / (h * h));
                }
            }
            Some(AxisWeights { lo, w, d2 })
        })
        .collect();

    let mut out = vec![0.0f64; grid.len()];
    out.par_chunks_mut(r * r).enumerate().for_each(|(k, slice)| {
        for aw in weights.iter().flatten() {
            if k < aw.lo[2] || k >= aw.lo[2] + aw.w[2].len() {
                continue;
            }
            let kz = k - aw.lo[2];
            let (wz, dz) = (aw.w[2][kz], aw.d2[2][kz]);
            for (jy, (&wy, &dy)) in aw.w[1].iter().zip(&aw.d2[1]).enumerate() {
                let rest = lim2 - dz - dy;
                if rest < 0.0 {
                    continue;
                }
                let wyz = wy * wz;
                let row = (aw.lo[1] + jy) * r + aw.lo[0];
                for (ix, (&wx, &dx)) in aw.w[0].iter().zip(&aw.d2[0]).enumerate() {
                    if dx <= rest {
                        slice[row + ix] += wx * wyz;
                    }
                }
            }
        }
    });
    out
}

/// Local vertex density channel with the default bandwidth.
pub fn compute_vertex_density(mesh: &TriangleMesh, grid: &VoxelGrid) -> Vec<f64> {
    let h = LVD_BANDWIDTH_EDGES * average_edge_length(mesh);
    vertex_density_with_bandwidth(mesh, grid, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Point, Vec3};
    use approx::assert_abs_diff_eq;

    /// One vertex per point, each carried by a collapsed triangle.
    fn point_mesh(pts: &[Point]) -> TriangleMesh {
        let t = (0..pts.len() as u32).map(|i| [i, i, i]).collect();
        TriangleMesh::with_normals(pts.to_vec(), t, vec![Vec3::z(); pts.len()]).unwrap()
    }

    fn brute(pts: &[Point], grid: &VoxelGrid, h: f64) -> Vec<f64> {
        (0..grid.len())
            .map(|idx| {
                let c = grid.center_of(idx);
                pts.iter()
                    .map(|p| (c - p).norm_squared())
                    .filter(|d2| *d2 <= 9.0 * h * h)
                    .map(|d2| (-d2 / (2.0 * h * h)).exp())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn single_vertex_peak_and_one_bandwidth_away() {
        let g = VoxelGrid::new(16, [0.0; 3], 1.0).unwrap();
        let m = point_mesh(&[Point::new(5.5, 5.5, 5.5)]);
        let d = vertex_density_with_bandwidth(&m, &g, 2.0);
        let peak = g.index(5, 5, 5);
        assert_eq!(d[peak], 1.0);
        assert_eq!(d.iter().cloned().fold(0.0, f64::max), 1.0);
        assert_abs_diff_eq!(d[g.index(7, 5, 5)], (-0.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn coincident_vertices_double_the_field() {
        let g = VoxelGrid::new(12, [0.0; 3], 1.0).unwrap();
        let p = Point::new(4.2, 6.1, 5.0);
        let one = vertex_density_with_bandwidth(&point_mesh(&[p]), &g, 1.5);
        let two = vertex_density_with_bandwidth(&point_mesh(&[p, p]), &g, 1.5);
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn matches_brute_force() {
        let g = VoxelGrid::new(10, [-1.0; 3], 0.25).unwrap();
        let pts = [Point::new(0.1, 0.2, -0.3), Point::new(-0.6, 0.4, 0.5), Point::new(0.3, -0.9, 0.0)];
        let m = point_mesh(&pts);
        let d = vertex_density_with_bandwidth(&m, &g, 0.3);
        let b = brute(&pts, &g, 0.3);
        for (x, y) in d.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }
}
