use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::voxelize::Voxelization;
use crate::mesh::Point;

/// Averages per-sample feature vectors into the surface voxels that contain
/// them. Surface voxels without samples copy the nearest sample-bearing
/// surface voxel; every other voxel stays zero. Samples falling in a
/// non-surface cell are ignored.
pub fn splat_surface_features<const N: usize>(
    vox: &Voxelization,
    positions: &[Point],
    values: &[[f64; N]],
) -> Vec<[f64; N]> {
    assert_eq!(positions.len(), values.len());
    let grid = &vox.grid;
    let mut sum = vec![[0.0f64; N]; grid.len()];
    let mut count = vec![0u32; grid.len()];
    for (p, v) in positions.iter().zip(values) {
        let Some([i, j, k]) = grid.cell_of(p) else { continue };
        let idx = grid.index(i, j, k);
        if !vox.is_surface(idx) {
            continue;
        }
        for c in 0..N {
            sum[idx][c] += v[c];
        }
        count[idx] += 1;
    }
    let mut out = vec![[0.0f64; N]; grid.len()];
    let mut bearing = Vec::new();
    for idx in 0..grid.len() {
        if count[idx] > 0 {
            let n = count[idx] as f64;
            out[idx] = sum[idx].map(|s| s / n);
            bearing.push(idx);
        }
    }
    if bearing.is_empty() {
        return out;
    }
    let centers: Vec<[f64; 3]> = bearing
        .iter()
        .map(|&idx| grid.coords(idx).map(|c| c as f64))
        .collect();
    let tree = ImmutableKdTree::new_from_slice(&centers).expect("nonempty");
    for idx in 0..grid.len() {
        if vox.is_surface(idx) && count[idx] == 0 {
            let q = grid.coords(idx).map(|c| c as f64);
            let nn = tree.query(&q).nearest_one::<SquaredEuclidean<f64>>().execute();
            out[idx] = out[bearing[nn.item as usize]];
        }
    }
    out
}
