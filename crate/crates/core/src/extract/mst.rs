//! Prim's algorithm on a dense cost matrix and skeleton assembly.

use crate::error::{Result, VolrigError};
use crate::features::OccupancyMask;
use crate::mesh::Point;
use crate::skeleton::{Joint, Skeleton};

use super::nms::JointCandidate;
use super::traverse::edge_cost;

/// Symmetric matrix of bone costs between all joint pairs.
pub fn cost_matrix(joints: &[JointCandidate], bones: &[f64], mask: &OccupancyMask) -> Vec<Vec<f64>> {
    let n = joints.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = edge_cost(bones, mask, joints[i].voxel, joints[j].voxel);
            w[i][j] = c;
            w[j][i] = c;
        }
    }
    w
}

/// Minimum spanning tree as `(i, j)` pairs with `i < j`, grown from vertex 0.
/// Among equal crossing edges the smallest `(i, j)` wins.
pub fn prim(w: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut best: Option<(f64, (usize, usize))> = None;
        for u in (0..n).filter(|&u| in_tree[u]) {
            for v in (0..n).filter(|&v| !in_tree[v]) {
                let key = (u.min(v), u.max(v));
                let c = w[u][v];
                let better = match best {
                    None => true,
                    Some((bc, bk)) => c < bc || (c == bc && key < bk),
                };
                if better {
                    best = Some((c, key));
                }
            }
        }
        let (_, (a, b)) = best.expect("a vertex remains outside the tree");
        in_tree[a] = true;
        in_tree[b] = true;
        edges.push((a, b));
    }
    edges
}

pub fn tree_cost(w: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    edges.iter().map(|&(a, b)| w[a][b]).sum()
}

/// Index of the point nearest to `c`; the lowest index wins ties.
pub fn nearest_to(points: &[Point], c: &Point) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = (p - c).norm_squared();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Spanning tree over the detected joints, rooted at the joint nearest the
/// centroid of the masked voxels.
pub fn build_skeleton(joints: &[JointCandidate], bones: &[f64], mask: &OccupancyMask) -> Result<Skeleton> {
    if joints.is_empty() {
        return Err(VolrigError::Skeleton("no joints to connect".into()));
    }
    let w = cost_matrix(joints, bones, mask);
    let edges = prim(&w);
    let positions: Vec<Point> = joints.iter().map(|j| j.position).collect();
    let centroid = mask
        .centroid()
        .ok_or_else(|| VolrigError::Invalid("empty occupancy mask".into()))?;
    let root = nearest_to(&positions, &centroid).expect("joints are non-empty");
    let named = positions
        .iter()
        .enumerate()
        .map(|(i, p)| Joint {
            name: format!("joint{i}"),
            position: *p,
        })
        .collect();
    Skeleton::from_undirected(named, &edges, root)
}
